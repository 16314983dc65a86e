#include "pmsfm/io.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "pmsfm/errors.h"

namespace pmsfm {

namespace {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t k = 0; k < sizeof(T) / 2; ++k) std::swap(b[k], b[sizeof(T) - 1 - k]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

template <typename T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError(std::string("truncated file while reading ") + what);
  return to_little(v);
}

void expect_magic(std::istream& is, const char (&magic)[5]) {
  char buf[4];
  if (!is.read(buf, 4)) throw FormatError("truncated file while reading magic");
  if (std::memcmp(buf, magic, 4) != 0) throw FormatError(std::string("bad magic, expected ") + magic);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open for reading: " + path.string());
  return is;
}

void expect_eof(std::istream& is, const std::filesystem::path& path) {
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in " + path.string());
}

struct LpmfHeader {
  int height, width;
  std::uint32_t flags;
};

LpmfHeader read_header(std::istream& is) {
  expect_magic(is, "LPMF");
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kLpmfVersion) throw FormatError("unsupported LPMF version " + std::to_string(version));
  const auto h = get<std::uint32_t>(is, "height");
  const auto w = get<std::uint32_t>(is, "width");
  const auto flags = get<std::uint32_t>(is, "flags");
  if (h == 0 || w == 0 || h > (1u << 16) || w > (1u << 16)) throw FormatError("invalid LPMF shape");
  if (flags & ~(kLpmfHasConfidence | kLpmfHasMask)) throw FormatError("unknown LPMF flags");
  return {static_cast<int>(h), static_cast<int>(w), flags};
}

}  // namespace

void write_lpmf(std::ostream& os, const Pointmap& points, const ConfidenceMap* confidence) {
  if (confidence && !confidence->same_shape(points)) throw ShapeMismatch("LPMF: confidence shape differs from pointmap");
  os.write("LPMF", 4);
  put<std::uint32_t>(os, kLpmfVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(points.height()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(points.width()));
  put<std::uint32_t>(os, (confidence ? kLpmfHasConfidence : 0u) | kLpmfHasMask);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int c = 0; c < 3; ++c) put<float>(os, points.valid(i) ? static_cast<float>(points[i][c]) : nan);
  }
  if (confidence) {
    for (std::size_t i = 0; i < points.size(); ++i) put<float>(os, static_cast<float>((*confidence)[i]));
  }
  for (std::size_t i = 0; i < points.size(); ++i) put<std::uint8_t>(os, points.valid(i) ? 1 : 0);
}

LpmfRecord read_lpmf(std::istream& is) {
  const LpmfHeader hdr = read_header(is);
  const std::size_t count = static_cast<std::size_t>(hdr.height) * hdr.width;
  std::vector<Vec3> pts(count);
  for (std::size_t i = 0; i < count; ++i) {
    for (int c = 0; c < 3; ++c) pts[i][c] = get<float>(is, "points");
  }
  LpmfRecord rec;
  if (hdr.flags & kLpmfHasConfidence) {
    ConfidenceMap conf(hdr.height, hdr.width);
    for (std::size_t i = 0; i < count; ++i) {
      conf[i] = get<float>(is, "confidence");
      if (!(conf[i] >= 1.0)) throw FormatError("LPMF confidence below 1");
    }
    rec.confidence = std::move(conf);
  }
  std::vector<std::uint8_t> mask(count, 1);
  if (hdr.flags & kLpmfHasMask) {
    for (std::size_t i = 0; i < count; ++i) {
      mask[i] = get<std::uint8_t>(is, "mask");
      if (mask[i] > 1) throw FormatError("LPMF mask values must be 0 or 1");
    }
  }
  rec.points = Pointmap(hdr.height, hdr.width);
  for (std::size_t i = 0; i < count; ++i) {
    if (!mask[i]) continue;
    if (!pts[i].allFinite()) throw FormatError("LPMF non-finite point inside the valid mask");
    rec.points.set(i, pts[i]);
  }
  return rec;
}

void write_lpmf_file(const std::filesystem::path& path, const Pointmap& points, const ConfidenceMap* confidence) {
  auto os = open_out(path);
  write_lpmf(os, points, confidence);
  if (!os) throw FormatError("write failed: " + path.string());
}

LpmfRecord read_lpmf_file(const std::filesystem::path& path) {
  auto is = open_in(path);
  LpmfRecord rec = read_lpmf(is);
  expect_eof(is, path);
  return rec;
}

void write_edge_file(const std::filesystem::path& path, const EdgeDecode& decode) {
  auto os = open_out(path);
  write_lpmf(os, decode.ref_points, &decode.ref_conf);
  write_lpmf(os, decode.other_points, &decode.other_conf);
  if (!os) throw FormatError("write failed: " + path.string());
}

EdgeDecode read_edge_file(const std::filesystem::path& path) {
  auto is = open_in(path);
  LpmfRecord a = read_lpmf(is);
  LpmfRecord b = read_lpmf(is);
  expect_eof(is, path);
  if (!a.confidence || !b.confidence) throw FormatError("edge file records must carry confidence: " + path.string());
  return {std::move(a.points), std::move(b.points), std::move(*a.confidence), std::move(*b.confidence)};
}

std::pair<std::pair<int, int>, std::pair<int, int>> read_edge_shapes(const std::filesystem::path& path) {
  auto is = open_in(path);
  const LpmfHeader a = read_header(is);
  const std::size_t count = static_cast<std::size_t>(a.height) * a.width;
  std::size_t payload = count * 12;
  if (a.flags & kLpmfHasConfidence) payload += count * 4;
  if (a.flags & kLpmfHasMask) payload += count;
  is.seekg(static_cast<std::streamoff>(payload), std::ios::cur);
  const LpmfHeader b = read_header(is);
  return {{a.height, a.width}, {b.height, b.width}};
}

void write_embeddings(const std::filesystem::path& path, std::span<const Eigen::VectorXd> embeddings) {
  if (embeddings.empty() || embeddings[0].size() == 0) throw InvalidArgument("embeddings must be non-empty");
  auto os = open_out(path);
  os.write("LEMB", 4);
  put<std::uint32_t>(os, 1);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(embeddings.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(embeddings[0].size()));
  for (const auto& e : embeddings) {
    if (e.size() != embeddings[0].size()) throw ShapeMismatch("embedding dimensions differ");
    for (Eigen::Index k = 0; k < e.size(); ++k) put<float>(os, static_cast<float>(e[k]));
  }
}

std::vector<Eigen::VectorXd> read_embeddings(const std::filesystem::path& path) {
  auto is = open_in(path);
  expect_magic(is, "LEMB");
  if (get<std::uint32_t>(is, "version") != 1) throw FormatError("unsupported LEMB version");
  const auto n = get<std::uint32_t>(is, "n");
  const auto d = get<std::uint32_t>(is, "d");
  if (n == 0 || d == 0) throw FormatError("LEMB n and d must be positive");
  std::vector<Eigen::VectorXd> out(n, Eigen::VectorXd(d));
  for (auto& e : out) {
    for (std::uint32_t k = 0; k < d; ++k) e[k] = get<float>(is, "embedding");
  }
  expect_eof(is, path);
  return out;
}

void write_poses(std::ostream& os, std::span<const PoseRecord> poses) {
  const auto old_precision = os.precision(17);
  for (const auto& rec : poses) {
    Eigen::Quaterniond q(rec.pose.rotation);
    q.normalize();
    if (q.w() < 0.0) q.coeffs() *= -1.0;
    const Vec3& t = rec.pose.translation;
    os << rec.id << ' ' << q.w() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << t.x() << ' ' << t.y()
       << ' ' << t.z() << ' ' << rec.focal << '\n';
  }
  os.precision(old_precision);
}

std::vector<PoseRecord> read_poses(std::istream& is) {
  std::vector<PoseRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    PoseRecord rec;
    double qw, qx, qy, qz, tx, ty, tz;
    if (!(ls >> rec.id >> qw >> qx >> qy >> qz >> tx >> ty >> tz >> rec.focal)) {
      throw FormatError("malformed pose line " + std::to_string(line_no));
    }
    std::string extra;
    if (ls >> extra) throw FormatError("trailing fields on pose line " + std::to_string(line_no));
    const Eigen::Quaterniond q(qw, qx, qy, qz);
    if (std::abs(q.norm() - 1.0) > 1e-6) throw FormatError("non-unit quaternion on pose line " + std::to_string(line_no));
    rec.pose.rotation = q.normalized().toRotationMatrix();
    rec.pose.translation = Vec3(tx, ty, tz);
    out.push_back(rec);
  }
  return out;
}

void write_poses_file(const std::filesystem::path& path, std::span<const PoseRecord> poses) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  write_poses(os, poses);
}

std::vector<PoseRecord> read_poses_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open for reading: " + path.string());
  return read_poses(is);
}

void write_ply(const std::filesystem::path& path, std::span<const Vec3> points, std::span<const double> confidence) {
  if (!confidence.empty() && confidence.size() != points.size()) throw ShapeMismatch("PLY: confidence count differs");
  auto os = open_out(path);
  os << "ply\nformat binary_little_endian 1.0\nelement vertex " << points.size()
     << "\nproperty float x\nproperty float y\nproperty float z\nproperty float confidence\nend_header\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int c = 0; c < 3; ++c) put<float>(os, static_cast<float>(points[i][c]));
    put<float>(os, confidence.empty() ? 1.0f : static_cast<float>(confidence[i]));
  }
}

PointCloud read_ply(const std::filesystem::path& path) {
  auto is = open_in(path);
  std::string line;
  if (!std::getline(is, line) || line.rfind("ply", 0) != 0) throw FormatError("not a PLY file: " + path.string());

  bool binary = false;
  std::size_t vertex_count = 0;
  bool in_vertex = false;
  bool vertex_seen = false;
  std::vector<std::pair<std::string, std::string>> props;  // (type, name)
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") binary = true;
      else if (fmt != "ascii") throw FormatError("unsupported PLY format " + fmt);
    } else if (key == "element") {
      std::string name;
      ls >> name;
      in_vertex = name == "vertex";
      if (in_vertex) {
        if (vertex_seen) throw FormatError("duplicate vertex element");
        vertex_seen = true;
        ls >> vertex_count;
      } else if (!vertex_seen) {
        throw FormatError("PLY elements before vertex are not supported");
      }
    } else if (key == "property" && in_vertex) {
      std::string type, name;
      ls >> type;
      if (type == "list") throw FormatError("list properties on vertices are not supported");
      ls >> name;
      props.emplace_back(type, name);
    } else if (key == "end_header") {
      break;
    }
  }
  if (!vertex_seen) throw FormatError("PLY has no vertex element");

  static const std::map<std::string, int> kSizes = {
      {"char", 1},  {"int8", 1},   {"uchar", 1}, {"uint8", 1},   {"short", 2},   {"int16", 2},
      {"ushort", 2}, {"uint16", 2}, {"int", 4},   {"int32", 4},   {"uint", 4},    {"uint32", 4},
      {"float", 4}, {"float32", 4}, {"double", 8}, {"float64", 8}};
  int ix = -1, iy = -1, iz = -1, ic = -1;
  for (int k = 0; k < static_cast<int>(props.size()); ++k) {
    if (!kSizes.count(props[k].first)) throw FormatError("unsupported PLY property type " + props[k].first);
    const auto& name = props[k].second;
    if (name == "x") ix = k;
    if (name == "y") iy = k;
    if (name == "z") iz = k;
    if (name == "confidence") ic = k;
  }
  if (ix < 0 || iy < 0 || iz < 0) throw FormatError("PLY vertices lack x/y/z");

  auto read_scalar = [&](const std::string& type) -> double {
    if (!binary) {
      double v;
      if (!(is >> v)) throw FormatError("truncated ascii PLY");
      return v;
    }
    if (type == "char" || type == "int8") return get<std::int8_t>(is, "ply");
    if (type == "uchar" || type == "uint8") return get<std::uint8_t>(is, "ply");
    if (type == "short" || type == "int16") return get<std::int16_t>(is, "ply");
    if (type == "ushort" || type == "uint16") return get<std::uint16_t>(is, "ply");
    if (type == "int" || type == "int32") return get<std::int32_t>(is, "ply");
    if (type == "uint" || type == "uint32") return get<std::uint32_t>(is, "ply");
    if (type == "float" || type == "float32") return get<float>(is, "ply");
    return get<double>(is, "ply");
  };

  PointCloud cloud;
  cloud.points.resize(vertex_count);
  if (ic >= 0) cloud.confidence.resize(vertex_count);
  std::vector<double> row(props.size());
  for (std::size_t v = 0; v < vertex_count; ++v) {
    for (std::size_t k = 0; k < props.size(); ++k) row[k] = read_scalar(props[k].first);
    cloud.points[v] = Vec3(row[ix], row[iy], row[iz]);
    if (ic >= 0) cloud.confidence[v] = row[ic];
  }
  return cloud;
}

}  // namespace pmsfm
