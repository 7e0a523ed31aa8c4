#include "seg25d/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <optional>
#include <sstream>

#include "seg25d/config.hpp"
#include "seg25d/fpenv.hpp"
#include "seg25d/manifest.hpp"
#include "seg25d/metrics.hpp"
#include "seg25d/ninepath.hpp"
#include "seg25d/random.hpp"
#include "seg25d/store.hpp"
#include "seg25d/trainer.hpp"

namespace seg25d {

namespace fs = std::filesystem;

namespace {

Dims parse_size(const std::string& s) {
  std::size_t v[3];
  std::istringstream is(s);
  char sep1 = 0, sep2 = 0;
  if (!(is >> v[0] >> sep1 >> v[1] >> sep2 >> v[2]) || sep1 != 'x' || sep2 != 'x' ||
      is.peek() != EOF) {
    throw ConfigError("size must look like 48x64x48, got \"" + s + "\"");
  }
  Dims d{v[0], v[1], v[2]};
  require_divisible_by_16(d);
  return d;
}

std::string case_name(std::size_t i) {
  std::string n = std::to_string(i);
  return "case_" + std::string(n.size() < 3 ? 3 - n.size() : 0, '0') + n;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::size_t effective_threads(bool reference, std::size_t threads) {
  return reference ? 1 : std::max<std::size_t>(1, threads);
}

void cmd_phantom(std::size_t count, const std::string& size, std::uint64_t seed,
                 const std::string& tags_arg, const fs::path& out_dir, std::ostream& out) {
  if (count == 0) throw ConfigError("count must be positive");
  const Dims dims = parse_size(size);
  std::vector<std::string> tags;
  std::istringstream ts(tags_arg);
  for (std::string t; std::getline(ts, t, ',');) {
    if (t.empty()) throw ConfigError("empty split tag in \"" + tags_arg + "\"");
    tags.push_back(t);
  }
  if (tags.empty()) throw ConfigError("at least one split tag is required");
  ensure_dir(out_dir);
  Manifest m;
  for (std::size_t i = 0; i < count; ++i) {
    PhantomSpec spec;
    spec.dims = dims;
    spec.seed = mix_seed(seed, i);
    const Phantom ph = gen_phantom(spec);
    const std::string id = case_name(i);
    const fs::path t1 = out_dir / (id + "_t1.mvol");
    const fs::path flair = out_dir / (id + "_flair.mvol");
    const fs::path truth = out_dir / (id + "_truth.mvol");
    write_volume(ph.t1, t1);
    write_volume(ph.flair, flair);
    write_volume(ph.truth, truth);
    m.records.push_back({id, fs::absolute(t1), fs::absolute(flair), fs::absolute(truth),
                         tags[i * tags.size() / count]});
  }
  write_manifest(m, out_dir / "manifest.json");
  out << "wrote " << count << " phantoms to " << out_dir.string() << "\n";
}

void cmd_split(const fs::path& manifest, std::size_t kfold, bool cross_study, std::uint64_t seed,
               const fs::path& out_dir, std::ostream& out) {
  if ((kfold > 0) == cross_study) throw ConfigError("choose exactly one of --kfold or --cross-study");
  const Manifest m = load_manifest(manifest);
  ensure_dir(out_dir);
  if (cross_study) {
    for (const auto& s : cross_study_split(m)) {
      const std::string stem = s.train_tag + "_to_" + s.test_tag;
      write_manifest(s.split.train, out_dir / (stem + "_train.json"));
      write_manifest(s.split.test, out_dir / (stem + "_test.json"));
      out << stem << " train=" << s.split.train.records.size()
          << " test=" << s.split.test.records.size() << "\n";
    }
    return;
  }
  const auto folds = kfold_split(m, kfold, seed);
  for (std::size_t i = 0; i < folds.size(); ++i) {
    const std::string stem = "fold_" + std::to_string(i);
    write_manifest(folds[i].train, out_dir / (stem + "_train.json"));
    write_manifest(folds[i].test, out_dir / (stem + "_test.json"));
    out << stem << " train=" << folds[i].train.records.size()
        << " test=" << folds[i].test.records.size() << "\n";
  }
}

void cmd_train(const fs::path& manifest, const fs::path& config_path, const fs::path& out_ckpt,
               std::optional<fs::path> log_path, std::size_t threads, std::ostream& out) {
  const RunConfig cfg = load_run_config(config_path);
  const Manifest m = load_manifest(manifest);
  const auto cases = load_cases(m, cfg.mode);
  if (cases.front().primary.dims() != cfg.dims) {
    throw DataError("training volumes are " + to_string(cases.front().primary.dims()) +
                    " but the config says " + to_string(cfg.dims));
  }
  TrainLog log;
  const NinePathModel model = train(cases, cfg.train_config(threads), &log);
  write_checkpoint(model.save(config_hash(cfg)), out_ckpt);
  const fs::path lp = log_path ? *log_path : fs::path(out_ckpt.string() + ".log.csv");
  write_text(lp, log.to_csv());
  out << "trained " << cases.size() << " cases; checkpoint " << out_ckpt.string() << ", log "
      << lp.string() << "\n";
}

const Volume* second_for(const NinePathModel& model, const std::optional<Volume>& second) {
  if (model.mode == InputMode::BIMODAL && !second) {
    throw DataError("the checkpoint was trained in bimodal mode; a secondary input is required");
  }
  if (model.mode == InputMode::FLIP && second) {
    throw ConfigError("the checkpoint was trained in flip mode; do not pass a secondary input");
  }
  return second ? &*second : nullptr;
}

void cmd_predict(const std::string& input, const std::string& secondary,
                 const std::string& manifest, const fs::path& checkpoint,
                 const std::string& aggregation, const std::string& out_path,
                 const std::string& out_dir, std::size_t threads, std::ostream& out) {
  const Aggregation agg = aggregation_from_string(aggregation);
  const bool batch = !manifest.empty();
  if (batch == !input.empty()) throw ConfigError("pass exactly one of --input or --manifest");
  if (batch && (out_dir.empty() || !out_path.empty() || !secondary.empty())) {
    throw ConfigError("--manifest needs --out-dir and takes no --out or --secondary");
  }
  if (!batch && (out_path.empty() || !out_dir.empty())) {
    throw ConfigError("--input needs --out and takes no --out-dir");
  }
  NinePathModel model = NinePathModel::load(read_checkpoint(checkpoint));
  auto run = [&](const Volume& primary, const std::optional<Volume>& second,
                 const fs::path& dest) {
    const Volume* s = second_for(model, second);
    if (s != nullptr) require_same_dims(primary, *s, "secondary input");
    write_volume(predict(model, primary, s, agg, threads).mask, dest);
  };
  if (!batch) {
    std::optional<Volume> second;
    if (!secondary.empty()) second = read_volume(secondary);
    run(read_volume(input), second, out_path);
    out << "wrote " << out_path << "\n";
    return;
  }
  const Manifest m = load_manifest(manifest);
  ensure_dir(out_dir);
  for (const auto& r : m.records) {
    std::optional<Volume> second;
    if (model.mode == InputMode::BIMODAL) {
      if (!r.second_input_path) {
        throw DataError("case " + r.case_id + ": bimodal checkpoint needs second_input_path");
      }
      second = read_volume(*r.second_input_path);
    }
    run(read_volume(r.input_volume_path), second, fs::path(out_dir) / (r.case_id + ".mvol"));
  }
  out << "wrote " << m.records.size() << " masks to " << out_dir << "\n";
}

std::string summary_line(const std::string& group, const std::vector<double>& d) {
  std::ostringstream os;
  os << "group=" << group << " n=" << d.size();
  if (!d.empty()) {
    const SummaryStats s = summarize(d);
    os << " mean=" << format_double(s.mean) << " median=" << format_double(s.median)
       << " q1=" << format_double(s.q1) << " q3=" << format_double(s.q3)
       << " min=" << format_double(s.min) << " max=" << format_double(s.max);
  }
  return os.str();
}

void cmd_evaluate(const fs::path& pred_dir, const fs::path& manifest, const fs::path& out_csv,
                  std::ostream& out) {
  const Manifest m = load_manifest(manifest);
  std::vector<CaseReport> reports;
  std::vector<double> all, small, large;
  for (const auto& r : m.records) {
    const fs::path p = pred_dir / (r.case_id + ".mvol");
    if (!fs::exists(p)) throw DataError("no prediction for case " + r.case_id + " at " + p.string());
    const CaseReport rep = dice_coefficient(read_volume(p), read_volume(r.truth_mask_path), r.case_id);
    all.push_back(rep.dice);
    (rep.size.lesion_class == LesionClass::SMALL ? small : large).push_back(rep.dice);
    reports.push_back(rep);
  }
  write_text(out_csv, case_reports_csv(reports));
  out << summary_line("all", all) << "\n"
      << summary_line("SMALL", small) << "\n"
      << summary_line("LARGE", large) << "\n";
}

void cmd_compare(const fs::path& a, const fs::path& b, std::ostream& out) {
  const auto da = read_dice_column(a);
  const auto db = read_dice_column(b);
  const RankSumResult r = wilcoxon_ranksum(da, db);
  out << "n_a=" << da.size() << " n_b=" << db.size() << " W=" << format_double(r.w)
      << " p=" << format_double(r.p) << " method=" << (r.exact ? "exact" : "normal") << "\n";
}

void cmd_overlap(const fs::path& mask_dir, const fs::path& out_path, std::ostream& out) {
  if (!fs::is_directory(mask_dir)) throw DataError(mask_dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(mask_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".mvol") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .mvol masks in " + mask_dir.string());
  std::vector<Volume> masks;
  for (const auto& f : files) {
    Volume v = read_volume(f);
    if (v.modality() != Modality::MASK) throw DataError(f.string() + " is not a mask volume");
    masks.push_back(std::move(v));
  }
  write_volume(overlap_map(masks), out_path);
  out << "overlapped " << files.size() << " masks into " << out_path.string() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  enable_flush_to_zero();
  CLI::App app{"Nine-path 2.5D lesion segmentation"};
  app.require_subcommand(1);

  std::size_t count = 0;
  std::string size = "48x64x48", tags = "phantom", out_dir, manifest, config, out_path;
  std::string checkpoint, input, secondary, aggregation = "cnn", pred_dir, csv_a, csv_b, log_path;
  std::uint64_t seed = 0;
  std::size_t kfold = 0, threads = 1;
  bool cross_study = false, reference = false;

  auto* phantom = app.add_subcommand("phantom", "Generate synthetic phantoms and a manifest");
  phantom->add_option("--count", count, "Number of cases")->required();
  phantom->add_option("--size", size, "Volume size, e.g. 48x64x48");
  phantom->add_option("--seed", seed, "Random seed");
  phantom->add_option("--tags", tags, "Comma-separated split tags assigned in equal blocks");
  phantom->add_option("--out", out_dir, "Output directory")->required();

  auto* split = app.add_subcommand("split", "Write k-fold or cross-study manifests");
  split->add_option("--manifest", manifest)->required();
  split->add_option("--kfold", kfold, "Number of folds");
  split->add_flag("--cross-study", cross_study, "Split by the two split tags");
  split->add_option("--seed", seed);
  split->add_option("--out", out_dir, "Output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Train all nine paths, then the post-processor");
  train_cmd->add_option("--manifest", manifest)->required();
  train_cmd->add_option("--config", config, "JSON run config")->required();
  train_cmd->add_option("--out", out_path, "Output checkpoint (NPCK1)")->required();
  train_cmd->add_option("--log", log_path, "Training log CSV (default: <out>.log.csv)");

  auto* predict_cmd = app.add_subcommand("predict", "Predict lesion masks");
  predict_cmd->add_option("--checkpoint", checkpoint)->required();
  predict_cmd->add_option("--input", input, "Primary input volume");
  predict_cmd->add_option("--secondary", secondary, "Second modality (bimodal checkpoints)");
  predict_cmd->add_option("--manifest", manifest, "Predict every case of a manifest");
  predict_cmd->add_option("--aggregation", aggregation, "cnn, majority or union");
  predict_cmd->add_option("--out", out_path, "Output mask for --input");
  predict_cmd->add_option("--out-dir", out_dir, "Output directory for --manifest");

  for (auto* sub : {train_cmd, predict_cmd}) {
    sub->add_option("--threads", threads, "Worker threads");
    sub->add_flag("--reference", reference, "Single-threaded reference execution");
  }

  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against truth masks");
  evaluate->add_option("--pred-dir", pred_dir)->required();
  evaluate->add_option("--manifest", manifest)->required();
  evaluate->add_option("--out", out_path, "Per-case CSV")->required();

  auto* compare = app.add_subcommand("compare", "Wilcoxon rank-sum test on two dice columns");
  compare->add_option("csv_a", csv_a)->required();
  compare->add_option("csv_b", csv_b)->required();

  auto* overlap = app.add_subcommand("overlap", "Voxelwise count over a directory of masks");
  overlap->add_option("--mask-dir", pred_dir)->required();
  overlap->add_option("--out", out_path)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const std::size_t nthreads = effective_threads(reference, threads);
    if (phantom->parsed()) {
      cmd_phantom(count, size, seed, tags, out_dir, out);
    } else if (split->parsed()) {
      cmd_split(manifest, kfold, cross_study, seed, out_dir, out);
    } else if (train_cmd->parsed()) {
      cmd_train(manifest, config, out_path,
                log_path.empty() ? std::nullopt : std::optional<fs::path>(log_path), nthreads,
                out);
    } else if (predict_cmd->parsed()) {
      cmd_predict(input, secondary, manifest, checkpoint, aggregation, out_path, out_dir,
                  nthreads, out);
    } else if (evaluate->parsed()) {
      cmd_evaluate(pred_dir, manifest, out_path, out);
    } else if (compare->parsed()) {
      cmd_compare(csv_a, csv_b, out);
    } else if (overlap->parsed()) {
      cmd_overlap(pred_dir, out_path, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace seg25d
