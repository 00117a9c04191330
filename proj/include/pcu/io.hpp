#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "pcu/error.hpp"
#include "pcu/point_cloud.hpp"

namespace pcu::io {

// XYZN text: `x y z nx ny nz` per line, `#` comment lines. An optional
// seventh column (per-point deviation) is accepted and returned separately.
struct XyznData {
  PointCloud cloud;
  std::vector<double> extra;  // seventh column when every record has one
};

inline XyznData parse_xyzn(std::istream& in, const std::string& source = "<stream>") {
  std::vector<double> values;
  std::vector<double> extra;
  std::string line;
  std::size_t line_no = 0;
  std::size_t with_extra = 0;
  std::size_t records = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    double v[7];
    int count = 0;
    double tmp;
    while (count < 8 && fields >> tmp) {
      if (count < 7) v[count] = tmp;
      ++count;
    }
    if (!fields.eof() || (count != 6 && count != 7)) {
      throw IoError(source + ":" + std::to_string(line_no) + ": expected 6 or 7 numeric fields");
    }
    values.insert(values.end(), v, v + 6);
    if (count == 7) {
      extra.push_back(v[6]);
      ++with_extra;
    }
    ++records;
  }
  if (records == 0) throw IoError(source + ": no point records");

  XyznData out;
  out.cloud = PointCloud(static_cast<Index>(records));
  for (std::size_t i = 0; i < records; ++i) {
    for (int a = 0; a < 3; ++a) {
      out.cloud.positions(static_cast<Index>(i), a) = values[6 * i + a];
      out.cloud.normals(static_cast<Index>(i), a) = values[6 * i + 3 + a];
    }
  }
  if (with_extra == records) out.extra = std::move(extra);
  return out;
}

inline XyznData read_xyzn_with_extra(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  XyznData data = parse_xyzn(in, path.string());
  validate(data.cloud, path.string());
  return data;
}

inline PointCloud read_xyzn(const std::filesystem::path& path) { return read_xyzn_with_extra(path).cloud; }

inline std::string format_record(const double* v, int count) {
  std::string s;
  char buf[32];
  for (int i = 0; i < count; ++i) {
    std::snprintf(buf, sizeof(buf), "%.9g", v[i]);
    if (i) s += ' ';
    s += buf;
  }
  return s;
}

inline void write_xyzn(std::ostream& out, const PointCloud& cloud, const std::vector<double>* extra = nullptr) {
  for (Index i = 0; i < cloud.size(); ++i) {
    double v[7] = {cloud.positions(i, 0), cloud.positions(i, 1), cloud.positions(i, 2),
                   cloud.normals(i, 0),   cloud.normals(i, 1),   cloud.normals(i, 2),
                   extra ? (*extra)[static_cast<std::size_t>(i)] : 0.0};
    out << format_record(v, extra ? 7 : 6) << '\n';
  }
}

// Writes through a sibling temporary file and renames it into place, so a
// failed write never leaves a partial file at `path`.
template <typename Writer>
void write_atomically(const std::filesystem::path& path, Writer&& writer) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    writer(out);
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed for " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " to " + path.string());
  }
}

inline void write_xyzn(const std::filesystem::path& path, const PointCloud& cloud,
                       const std::vector<double>* extra = nullptr) {
  if (extra && static_cast<Index>(extra->size()) != cloud.size()) {
    throw ParameterError("write_xyzn: extra column length differs from cloud size");
  }
  write_atomically(path, [&](std::ostream& out) { write_xyzn(out, cloud, extra); });
}

// ASCII PLY with a `vertex` element carrying x y z nx ny nz (any order, other
// properties ignored). Elements before the vertex block are skipped.
inline PointCloud parse_ply(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  auto fail = [&](const std::string& why) -> IoError { return IoError(source + ": " + why); };
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw fail("missing 'ply' magic");

  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> properties;
    bool has_list = false;
  };
  std::vector<Element> elements;
  bool ascii = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (word == "element") {
      Element e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (word == "property") {
      if (elements.empty()) throw fail("property before element");
      std::string type;
      ls >> type;
      if (type == "list") {
        elements.back().has_list = true;
        std::string a, b, name;
        ls >> a >> b >> name;
        elements.back().properties.push_back(name);
      } else {
        std::string name;
        ls >> name;
        elements.back().properties.push_back(name);
      }
    } else if (word == "end_header") {
      break;
    }
  }
  if (!ascii) throw fail("only ASCII PLY is supported");

  for (const Element& e : elements) {
    if (e.name != "vertex") {
      for (std::size_t i = 0; i < e.count; ++i) {
        if (!std::getline(in, line)) throw fail("truncated element '" + e.name + "'");
      }
      continue;
    }
    if (e.has_list) throw fail("list properties on vertex are not supported");
    const char* wanted[6] = {"x", "y", "z", "nx", "ny", "nz"};
    int column[6];
    for (int w = 0; w < 6; ++w) {
      column[w] = -1;
      for (std::size_t p = 0; p < e.properties.size(); ++p) {
        if (e.properties[p] == wanted[w]) column[w] = static_cast<int>(p);
      }
      if (column[w] < 0) throw fail(std::string("vertex property '") + wanted[w] + "' missing");
    }
    PointCloud cloud(static_cast<Index>(e.count));
    std::vector<double> row(e.properties.size());
    for (std::size_t i = 0; i < e.count; ++i) {
      if (!std::getline(in, line)) throw fail("truncated vertex list");
      std::istringstream ls(line);
      for (auto& v : row) {
        if (!(ls >> v)) throw fail("malformed vertex " + std::to_string(i));
      }
      for (int a = 0; a < 3; ++a) {
        cloud.positions(static_cast<Index>(i), a) = row[static_cast<std::size_t>(column[a])];
        cloud.normals(static_cast<Index>(i), a) = row[static_cast<std::size_t>(column[3 + a])];
      }
    }
    return cloud;
  }
  throw fail("no vertex element");
}

inline PointCloud read_ply(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  PointCloud cloud = parse_ply(in, path.string());
  validate(cloud, path.string());
  return cloud;
}

// Dispatches on extension: .ply is PLY, anything else XYZN.
inline PointCloud read_cloud(const std::filesystem::path& path) {
  return path.extension() == ".ply" ? read_ply(path) : read_xyzn(path);
}

}  // namespace pcu::io
