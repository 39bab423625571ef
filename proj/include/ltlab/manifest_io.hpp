#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "ltlab/distribution.hpp"
#include "ltlab/json_util.hpp"

namespace ltlab {

// JSON Lines layout: the first line is a header
//   {"num_classes": K, "feature_dim": d, "task": "single"|"multi"}
// and every following line is one record
//   {"id": str, "features": [...], "label": int | "labels": [0/1...], "split": str}

inline std::string write_manifest_jsonl(const Manifest& m) {
  std::string out;
  json header = {{"num_classes", m.num_classes},
                 {"feature_dim", m.feature_dim},
                 {"task", m.is_multi_label() ? "multi" : "single"}};
  out += canonical_dump(header, -1);
  out += '\n';
  for (const auto& r : m.records) {
    json j;
    j["id"] = r.id;
    j["features"] = r.features;
    if (m.is_multi_label())
      j["labels"] = r.labels;
    else
      j["label"] = r.label;
    j["split"] = to_string(r.split);
    out += canonical_dump(j, -1);
    out += '\n';
  }
  return out;
}

inline Manifest parse_manifest_jsonl(std::istream& in, const std::string& source = "<manifest>") {
  std::string line;
  std::size_t lineno = 0;
  const auto fail = [&](const std::string& what) {
    return Error(source + ":" + std::to_string(lineno) + ": " + what);
  };
  Manifest m;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw fail(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw fail("expected a JSON object");
    try {
      if (!have_header) {
        m.num_classes = j.at("num_classes").get<std::size_t>();
        m.feature_dim = j.at("feature_dim").get<std::size_t>();
        const auto task = j.at("task").get<std::string>();
        if (task == "single")
          m.task = TaskKind::single_label;
        else if (task == "multi")
          m.task = TaskKind::multi_label;
        else
          throw fail("unknown task '" + task + "'");
        have_header = true;
        continue;
      }
      Record r;
      r.id = j.at("id").get<std::string>();
      r.features = j.at("features").get<std::vector<double>>();
      r.split = parse_split(j.at("split").get<std::string>());
      if (m.is_multi_label()) {
        if (j.contains("label")) throw fail("single 'label' in a multi-label manifest");
        r.labels = j.at("labels").get<std::vector<int>>();
      } else {
        if (j.contains("labels")) throw fail("'labels' vector in a single-label manifest");
        r.label = j.at("label").get<int>();
      }
      m.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw fail(e.what());
    }
  }
  if (!have_header) throw Error(source + ": missing header line");
  try {
    m.validate();
  } catch (const Error& e) {
    throw Error(source + ": " + e.what());
  }
  return m;
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest '" + path + "'");
  return parse_manifest_jsonl(in, path);
}

inline void save_manifest(const Manifest& m, const std::string& path) {
  write_file_atomic(path, write_manifest_jsonl(m));
}

}  // namespace ltlab
