#include "seg25d/manifest.hpp"

#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <set>

#include "seg25d/error.hpp"
#include "seg25d/random.hpp"

namespace seg25d {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  if (path.is_relative()) path = base / path;
  return path.lexically_normal();
}

std::string relative_to(const fs::path& p, const fs::path& dir) {
  const fs::path rel = p.lexically_relative(dir);
  return rel.empty() ? p.generic_string() : rel.generic_string();
}

void require_file(const fs::path& p, const std::string& case_id, const char* field) {
  if (!fs::exists(p)) {
    throw DataError("case " + case_id + ": " + field + " not found: " + p.string());
  }
}

}  // namespace

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  const fs::path base = fs::absolute(path).parent_path();
  Manifest m;
  std::set<std::string> ids;
  try {
    for (const auto& r : doc.at("records")) {
      ManifestRecord rec;
      rec.case_id = r.at("case_id").get<std::string>();
      rec.input_volume_path = resolve(base, r.at("input_volume_path").get<std::string>());
      if (r.contains("second_input_path") && !r.at("second_input_path").is_null()) {
        rec.second_input_path = resolve(base, r.at("second_input_path").get<std::string>());
      }
      rec.truth_mask_path = resolve(base, r.at("truth_mask_path").get<std::string>());
      rec.split_tag = r.value("split_tag", std::string{});
      if (!ids.insert(rec.case_id).second) {
        throw DataError("manifest " + path.string() + ": duplicate case_id " + rec.case_id);
      }
      m.records.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  for (const auto& rec : m.records) {
    require_file(rec.input_volume_path, rec.case_id, "input volume");
    if (rec.second_input_path) {
      require_file(*rec.second_input_path, rec.case_id, "second input");
    }
    require_file(rec.truth_mask_path, rec.case_id, "truth mask");
  }
  return m;
}

void write_manifest(const Manifest& m, const fs::path& path) {
  const fs::path dir = fs::absolute(path).parent_path();
  json records = json::array();
  for (const auto& r : m.records) {
    json j;
    j["case_id"] = r.case_id;
    j["input_volume_path"] = relative_to(r.input_volume_path, dir);
    if (r.second_input_path) {
      j["second_input_path"] = relative_to(*r.second_input_path, dir);
    }
    j["truth_mask_path"] = relative_to(r.truth_mask_path, dir);
    j["split_tag"] = r.split_tag;
    records.push_back(std::move(j));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << json{{"records", records}}.dump(2) << "\n";
}

std::vector<FoldSplit> kfold_split(const Manifest& m, std::size_t k, std::uint64_t seed) {
  const std::size_t n = m.records.size();
  if (k < 2) throw ConfigError("k-fold needs k >= 2, got " + std::to_string(k));
  if (k > n) {
    throw ConfigError("k-fold with k=" + std::to_string(k) + " exceeds " +
                      std::to_string(n) + " records");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<FoldSplit> folds(k);
  std::size_t start = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = n / k + (f < n % k ? 1 : 0);
    std::vector<bool> in_test(n, false);
    for (std::size_t i = start; i < start + len; ++i) in_test[order[i]] = true;
    // Records keep manifest order inside each part.
    for (std::size_t i = 0; i < n; ++i) {
      (in_test[i] ? folds[f].test : folds[f].train).records.push_back(m.records[i]);
    }
    start += len;
  }
  return folds;
}

std::vector<StudySplit> cross_study_split(const Manifest& m) {
  std::map<std::string, Manifest> by_tag;
  for (const auto& r : m.records) by_tag[r.split_tag].records.push_back(r);
  if (by_tag.size() != 2) {
    throw DataError("cross-study split needs exactly two split tags, found " +
                    std::to_string(by_tag.size()));
  }
  auto a = by_tag.begin();
  auto b = std::next(a);
  return {
      StudySplit{a->first, b->first, FoldSplit{a->second, b->second}},
      StudySplit{b->first, a->first, FoldSplit{b->second, a->second}},
  };
}

}  // namespace seg25d
