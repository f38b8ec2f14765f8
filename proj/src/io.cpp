#include "pcup/io.hpp"

#include <array>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pcup {

namespace {

std::string lower_ext(const std::string& path) {
  auto dot = path.find_last_of('.');
  if (dot == std::string::npos) return "";
  std::string ext = path.substr(dot + 1);
  for (char& c : ext) c = static_cast<char>(std::tolower(c));
  return ext;
}

[[noreturn]] void parse_fail(const std::string& path, size_t line,
                             const std::string& what) {
  throw ParseError(path + ":" + std::to_string(line) + ": " + what);
}

Points read_xyz(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::vector<double> vals;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    double x, y, z;
    if (!(ls >> x >> y >> z))
      parse_fail(path, lineno, "expected three numeric coordinates, got '" + line + "'");
    std::string extra;
    if (ls >> extra)
      parse_fail(path, lineno, "trailing token '" + extra + "'");
    vals.insert(vals.end(), {x, y, z});
  }
  Points pts(vals.size() / 3, 3);
  for (Index i = 0; i < pts.rows(); ++i)
    pts.row(i) = Eigen::RowVector3d(vals[3 * i], vals[3 * i + 1], vals[3 * i + 2]);
  return pts;
}

void write_xyz(const Points& pts, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.precision(17);
  for (Index i = 0; i < pts.rows(); ++i)
    os << pts(i, 0) << " " << pts(i, 1) << " " << pts(i, 2) << "\n";
}

struct PlyProperty {
  std::string name;
  int bytes = 0;     // binary width
  bool is_float = false;
};

int ply_type_bytes(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" ||
      t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  return 0;
}

Points read_ply(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  std::string line;
  size_t lineno = 0;
  auto next = [&]() {
    if (!std::getline(is, line)) parse_fail(path, lineno, "unexpected end of header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++lineno;
  };
  next();
  if (line != "ply") parse_fail(path, lineno, "missing 'ply' magic");
  bool binary = false;
  Index nverts = -1;
  std::vector<PlyProperty> props;
  bool in_vertex = false;
  bool vertex_seen = false;
  while (true) {
    next();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment") continue;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else parse_fail(path, lineno, "unsupported ply format '" + fmt + "'");
    } else if (tok == "element") {
      std::string name;
      Index count;
      ls >> name >> count;
      if (name == "vertex") {
        nverts = count;
        in_vertex = true;
        vertex_seen = true;
      } else {
        if (!vertex_seen)
          parse_fail(path, lineno, "element '" + name + "' precedes vertices; unsupported layout");
        in_vertex = false;
      }
    } else if (tok == "property") {
      if (!in_vertex) continue;  // face properties, irrelevant here
      std::string type, name;
      ls >> type;
      if (type == "list") parse_fail(path, lineno, "list property in vertex element");
      ls >> name;
      PlyProperty p;
      p.name = name;
      p.bytes = ply_type_bytes(type);
      p.is_float = (type == "float" || type == "float32" || type == "double" ||
                    type == "float64");
      if (p.bytes == 0) parse_fail(path, lineno, "unknown property type '" + type + "'");
      props.push_back(p);
    } else if (tok == "end_header") {
      break;
    } else {
      parse_fail(path, lineno, "unexpected header token '" + tok + "'");
    }
  }
  if (nverts < 0) parse_fail(path, lineno, "no vertex element");
  int ix = -1, iy = -1, iz = -1;
  for (size_t i = 0; i < props.size(); ++i) {
    if (props[i].name == "x") ix = static_cast<int>(i);
    if (props[i].name == "y") iy = static_cast<int>(i);
    if (props[i].name == "z") iz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0)
    parse_fail(path, lineno, "vertex element lacks x/y/z properties");
  for (int i : {ix, iy, iz})
    if (!props[static_cast<size_t>(i)].is_float)
      parse_fail(path, lineno, "coordinate property must be float or double");

  Points pts(nverts, 3);
  if (binary) {
    for (Index v = 0; v < nverts; ++v) {
      for (size_t i = 0; i < props.size(); ++i) {
        char buf[8];
        is.read(buf, props[i].bytes);
        if (!is) throw ParseError(path + ": truncated binary vertex data at vertex " +
                                  std::to_string(v));
        double val = 0;
        if (props[i].is_float && props[i].bytes == 4) {
          float f;
          std::memcpy(&f, buf, 4);
          val = f;
        } else if (props[i].is_float) {
          std::memcpy(&val, buf, 8);
        }
        if (static_cast<int>(i) == ix) pts(v, 0) = val;
        if (static_cast<int>(i) == iy) pts(v, 1) = val;
        if (static_cast<int>(i) == iz) pts(v, 2) = val;
      }
    }
  } else {
    for (Index v = 0; v < nverts; ++v) {
      next();
      std::istringstream ls(line);
      for (size_t i = 0; i < props.size(); ++i) {
        double val;
        if (!(ls >> val))
          parse_fail(path, lineno, "expected " + std::to_string(props.size()) +
                                       " vertex values");
        if (static_cast<int>(i) == ix) pts(v, 0) = val;
        if (static_cast<int>(i) == iy) pts(v, 1) = val;
        if (static_cast<int>(i) == iz) pts(v, 2) = val;
      }
    }
  }
  return pts;
}

void write_ply(const Points& pts, const std::string& path, PlyEncoding enc) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "ply\n";
  os << (enc == PlyEncoding::binary_little_endian ? "format binary_little_endian 1.0\n"
                                                  : "format ascii 1.0\n");
  os << "element vertex " << pts.rows() << "\n";
  os << "property double x\nproperty double y\nproperty double z\n";
  os << "end_header\n";
  if (enc == PlyEncoding::binary_little_endian) {
    for (Index i = 0; i < pts.rows(); ++i) {
      double row[3] = {pts(i, 0), pts(i, 1), pts(i, 2)};
      os.write(reinterpret_cast<const char*>(row), sizeof(row));
    }
  } else {
    os.precision(17);
    for (Index i = 0; i < pts.rows(); ++i)
      os << pts(i, 0) << " " << pts(i, 1) << " " << pts(i, 2) << "\n";
  }
}

std::pair<Points, std::vector<std::array<int, 3>>> read_off_impl(
    const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::string line;
  size_t lineno = 0;
  auto next = [&]() -> bool {
    while (std::getline(is, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      if (line.find_first_not_of(" \t") != std::string::npos) return true;
    }
    return false;
  };
  if (!next() || line.substr(0, 3) != "OFF")
    throw ParseError(path + ": missing OFF header");
  std::istringstream counts(line.substr(3));
  Index nv, nf, ne;
  if (!(counts >> nv >> nf >> ne)) {
    if (!next()) parse_fail(path, lineno, "missing count line");
    std::istringstream c2(line);
    if (!(c2 >> nv >> nf >> ne)) parse_fail(path, lineno, "malformed count line");
  }
  Points verts(nv, 3);
  for (Index i = 0; i < nv; ++i) {
    if (!next()) parse_fail(path, lineno, "unexpected end of vertices");
    std::istringstream ls(line);
    if (!(ls >> verts(i, 0) >> verts(i, 1) >> verts(i, 2)))
      parse_fail(path, lineno, "malformed vertex");
  }
  std::vector<std::array<int, 3>> tris;
  for (Index f = 0; f < nf; ++f) {
    if (!next()) parse_fail(path, lineno, "unexpected end of faces");
    std::istringstream ls(line);
    int k;
    if (!(ls >> k) || k < 3) parse_fail(path, lineno, "malformed face");
    std::vector<int> poly(k);
    for (int i = 0; i < k; ++i) {
      if (!(ls >> poly[i]) || poly[i] < 0 || poly[i] >= nv)
        parse_fail(path, lineno, "face index out of range");
    }
    for (int i = 1; i + 1 < k; ++i)  // fan triangulation
      tris.push_back({poly[0], poly[i], poly[i + 1]});
  }
  return {std::move(verts), std::move(tris)};
}

}  // namespace

CloudFormat format_from_path(const std::string& path) {
  std::string ext = lower_ext(path);
  if (ext == "xyz") return CloudFormat::xyz;
  if (ext == "ply") return CloudFormat::ply;
  if (ext == "off") return CloudFormat::off;
  throw ArgumentError("cannot infer cloud format from '" + path +
                      "' (expected .xyz, .ply or .off)");
}

Points read_cloud(const std::string& path, CloudFormat format) {
  switch (format) {
    case CloudFormat::xyz: return read_xyz(path);
    case CloudFormat::ply: return read_ply(path);
    case CloudFormat::off: return read_off_impl(path).first;
  }
  throw ArgumentError("read_cloud: unknown format");
}

Points read_cloud(const std::string& path) {
  return read_cloud(path, format_from_path(path));
}

void write_cloud(const Points& pts, const std::string& path, CloudFormat format,
                 PlyEncoding ply) {
  switch (format) {
    case CloudFormat::xyz: return write_xyz(pts, path);
    case CloudFormat::ply: return write_ply(pts, path, ply);
    case CloudFormat::off: {
      std::ofstream os(path);
      if (!os) throw IoError("cannot open for writing: " + path);
      os.precision(17);
      os << "OFF\n" << pts.rows() << " 0 0\n";
      for (Index i = 0; i < pts.rows(); ++i)
        os << pts(i, 0) << " " << pts(i, 1) << " " << pts(i, 2) << "\n";
      return;
    }
  }
  throw ArgumentError("write_cloud: unknown format");
}

void write_cloud(const Points& pts, const std::string& path) {
  write_cloud(pts, path, format_from_path(path));
}

TriangleMesh read_off_mesh(const std::string& path) {
  auto [verts, tris] = read_off_impl(path);
  if (tris.empty()) throw ArgumentError("read_off_mesh: no faces in " + path);
  TriangleMesh mesh;
  mesh.verts = std::move(verts);
  mesh.faces.resize(static_cast<Index>(tris.size()), 3);
  for (size_t i = 0; i < tris.size(); ++i)
    mesh.faces.row(static_cast<Index>(i)) << tris[i][0], tris[i][1], tris[i][2];
  return mesh;
}

void write_off_mesh(const TriangleMesh& mesh, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.precision(17);
  os << "OFF\n" << mesh.verts.rows() << " " << mesh.faces.rows() << " 0\n";
  for (Index i = 0; i < mesh.verts.rows(); ++i)
    os << mesh.verts(i, 0) << " " << mesh.verts(i, 1) << " " << mesh.verts(i, 2) << "\n";
  for (Index f = 0; f < mesh.faces.rows(); ++f)
    os << "3 " << mesh.faces(f, 0) << " " << mesh.faces(f, 1) << " "
       << mesh.faces(f, 2) << "\n";
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.cloud_path)) parse_fail(path, lineno, "empty manifest entry");
    ls >> e.mesh_path;
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace pcup
