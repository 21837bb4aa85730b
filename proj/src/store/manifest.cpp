#include <set>
#include <sstream>

#include <json.hpp>

#include "agsv/errors.hpp"
#include "agsv/image.hpp"
#include "agsv/store.hpp"

namespace agsv {

namespace {

// id <TAB> path [<TAB> key=value]...
ManifestEntry parse_tab_line(std::string line, const std::string& where) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  if (fields.size() < 2 || fields[0].empty() || fields[1].empty())
    throw DataError(where + "expected id, path and key=value fields separated by tabs");
  ManifestEntry e;
  e.id = fields[0];
  e.path = fields[1];
  for (std::size_t i = 2; i < fields.size(); ++i) {
    const auto eq = fields[i].find('=');
    if (eq == std::string::npos || eq == 0) throw DataError(where + "metadata field '" + fields[i] + "' is not key=value");
    e.metadata[fields[i].substr(0, eq)] = fields[i].substr(eq + 1);
  }
  return e;
}

}  // namespace

std::vector<ManifestEntry> parse_manifest(const std::string& text,
                                          const std::filesystem::path& base_dir) {
  std::vector<ManifestEntry> out;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const std::string where = "manifest line " + std::to_string(number) + ": ";
    if (line[first] != '{') {
      ManifestEntry e = parse_tab_line(line, where);
      e.path = e.path.is_absolute() || base_dir.empty() ? e.path : base_dir / e.path;
      if (!seen.insert(e.id).second) throw DuplicateId(e.id);
      out.push_back(std::move(e));
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + "not valid JSON");
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("path") ||
        !j["path"].is_string())
      throw DataError(where + "needs string fields \"id\" and \"path\"");
    ManifestEntry e;
    e.id = j["id"].get<std::string>();
    if (e.id.empty()) throw DataError(where + "empty id");
    std::filesystem::path p = j["path"].get<std::string>();
    e.path = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    if (j.contains("metadata")) {
      if (!j["metadata"].is_object()) throw DataError(where + "\"metadata\" must be an object");
      for (const auto& [key, value] : j["metadata"].items()) {
        if (!value.is_string()) throw DataError(where + "metadata values must be strings");
        e.metadata[key] = value.get<std::string>();
      }
    }
    if (!seen.insert(e.id).second) throw DuplicateId(e.id);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_manifest(std::string(bytes.begin(), bytes.end()), path.parent_path());
}

}  // namespace agsv
