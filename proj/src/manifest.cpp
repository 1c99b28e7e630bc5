#include "jtss/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "jtss/common.hpp"

namespace jtss::manifest {

Manifest load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest: " + path.string());
  const auto base = path.parent_path();
  Manifest m;
  std::set<std::string> seen;
  bool integer_ids = true;
  std::vector<long long> int_ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(where + ": invalid JSON (" + e.what() + ")");
    }
    for (const char* key : {"utt_id", "speaker_id", "path", "n_samples"})
      if (!j.contains(key)) throw Error(where + ": missing field '" + key + "'");
    Utterance u;
    u.utt_id = j.at("utt_id").get<std::string>();
    const auto& spk = j.at("speaker_id");
    if (spk.is_number_integer()) {
      int_ids.push_back(spk.get<long long>());
      u.speaker_id = std::to_string(int_ids.back());
    } else {
      integer_ids = false;
      u.speaker_id = spk.get<std::string>();
    }
    std::filesystem::path p = j.at("path").get<std::string>();
    u.path = p.is_absolute() ? p : base / p;
    u.n_samples = j.at("n_samples").get<std::size_t>();
    if (!seen.insert(u.utt_id).second) throw Error(where + ": duplicate utt_id '" + u.utt_id + "'");
    m.utterances.push_back(std::move(u));
  }
  if (m.utterances.empty()) throw Error("manifest is empty: " + path.string());

  if (integer_ids) {
    std::set<long long> ids(int_ids.begin(), int_ids.end());
    const long long expected = static_cast<long long>(ids.size());
    if (*ids.begin() != 0 || *ids.rbegin() != expected - 1)
      throw Error("manifest speaker labels must be dense 0..C-1 (label gap in " + path.string() + ")");
    for (long long id = 0; id < expected; ++id) m.speakers.push_back(std::to_string(id));
    for (auto& u : m.utterances) u.label = std::stoi(u.speaker_id);
  } else {
    std::map<std::string, int> index;
    for (const auto& u : m.utterances) index.emplace(u.speaker_id, 0);
    int next = 0;
    for (auto& [id, label] : index) {
      label = next++;
      m.speakers.push_back(id);
    }
    for (auto& u : m.utterances) u.label = index.at(u.speaker_id);
  }
  return m;
}

void save(const std::filesystem::path& path, const std::vector<Utterance>& utterances) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest: " + path.string());
  const auto base = path.parent_path();
  for (const auto& u : utterances) {
    std::filesystem::path p = u.path;
    if (p.is_absolute() && !base.empty()) p = std::filesystem::relative(p, std::filesystem::absolute(base));
    nlohmann::json j{{"utt_id", u.utt_id}, {"speaker_id", u.speaker_id}, {"path", p.generic_string()},
                     {"n_samples", u.n_samples}};
    out << j.dump() << '\n';
  }
}

}  // namespace jtss::manifest
