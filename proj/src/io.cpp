#include "cvf/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include <Eigen/LU>

namespace cvf {

namespace {

std::string describe(const std::string& source, std::size_t line, std::uint64_t offset,
                     const std::string& message) {
  std::ostringstream os;
  os << source;
  if (line > 0) os << ":" << line;
  os << ": " << message << " (byte " << offset << ")";
  return os.str();
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; }

struct Token {
  std::string_view text;
  std::uint64_t offset;
};

struct Line {
  std::string_view text;
  std::size_t number;
  std::uint64_t offset;
};

std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> lines;
  std::size_t start = 0, number = 1;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back({text.substr(start, end - start), number, start});
    start = end + 1;
    ++number;
  }
  return lines;
}

std::vector<Token> split_tokens(const Line& line, std::size_t from = 0) {
  std::vector<Token> out;
  std::size_t i = from;
  while (i < line.text.size()) {
    while (i < line.text.size() && is_space(line.text[i])) ++i;
    if (i >= line.text.size()) break;
    std::size_t j = i;
    while (j < line.text.size() && !is_space(line.text[j])) ++j;
    out.push_back({line.text.substr(i, j - i), line.offset + i});
    i = j;
  }
  return out;
}

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return is_space(c); });
}

double parse_number(const Token& tok, const std::string& source, std::size_t line,
                    const std::string& what) {
  double value = 0;
  const char* first = tok.text.data();
  const char* last = first + tok.text.size();
  if (!tok.text.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) {
    throw ParseError(source, line, tok.offset,
                     "malformed number '" + std::string(tok.text) + "' in " + what);
  }
  return value;
}

float read_f32_le(const char* p) {
  std::uint32_t bits = 0;
  for (int b = 3; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(p[b]);
  return std::bit_cast<float>(bits);
}

void append_f32_le(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

}  // namespace

ParseError::ParseError(const std::string& source, std::size_t line, std::uint64_t offset,
                       const std::string& message)
    : std::runtime_error(describe(source, line, offset, message)),
      source_(source),
      line_(line),
      offset_(offset) {}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

// ---------------------------------------------------------------- velodyne

std::vector<LidarPoint> parse_velodyne(std::string_view bytes, const std::string& source) {
  const std::size_t whole = bytes.size() / kVelodyneRecordBytes;
  if (bytes.size() % kVelodyneRecordBytes != 0) {
    throw ParseError(source, 0, whole * kVelodyneRecordBytes,
                     "truncated velodyne record: " + std::to_string(bytes.size()) +
                         " bytes is not a multiple of 16");
  }
  std::vector<LidarPoint> points(whole);
  for (std::size_t i = 0; i < whole; ++i) {
    const char* p = bytes.data() + i * kVelodyneRecordBytes;
    points[i] = {read_f32_le(p), read_f32_le(p + 4), read_f32_le(p + 8), read_f32_le(p + 12)};
  }
  return points;
}

std::string encode_velodyne(std::span<const LidarPoint> points) {
  std::string out;
  out.reserve(points.size() * kVelodyneRecordBytes);
  for (const auto& p : points) {
    append_f32_le(out, static_cast<float>(p.x));
    append_f32_le(out, static_cast<float>(p.y));
    append_f32_le(out, static_cast<float>(p.z));
    append_f32_le(out, static_cast<float>(p.intensity));
  }
  return out;
}

std::vector<LidarPoint> read_velodyne_bin(const std::filesystem::path& path) {
  return parse_velodyne(read_file_bytes(path), path.string());
}

void write_velodyne_bin(const std::filesystem::path& path, std::span<const LidarPoint> points) {
  write_file_bytes(path, encode_velodyne(points));
}

// ---------------------------------------------------------------- calibration

Calibration parse_kitti_calib(std::string_view text, const std::string& source) {
  struct Entry {
    std::vector<double> values;
    std::size_t line;
    std::uint64_t offset;
  };
  std::map<std::string, Entry, std::less<>> entries;
  const auto lines = split_lines(text);
  for (const auto& line : lines) {
    if (blank(line.text)) continue;
    const std::size_t colon = line.text.find(':');
    if (colon == std::string_view::npos) {
      throw ParseError(source, line.number, line.offset, "expected 'key: values'");
    }
    std::string_view key = line.text.substr(0, colon);
    while (!key.empty() && is_space(key.front())) key.remove_prefix(1);
    while (!key.empty() && is_space(key.back())) key.remove_suffix(1);
    if (key.empty() || std::any_of(key.begin(), key.end(), is_space)) {
      throw ParseError(source, line.number, line.offset, "malformed key");
    }
    Entry e{{}, line.number, line.offset};
    for (const auto& tok : split_tokens(line, colon + 1)) {
      e.values.push_back(parse_number(tok, source, line.number, std::string(key)));
    }
    if (!entries.emplace(std::string(key), std::move(e)).second) {
      throw ParseError(source, line.number, line.offset, "duplicate key '" + std::string(key) + "'");
    }
  }

  const std::size_t end_line = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) + 1;
  auto fetch = [&](const char* key, std::size_t count) -> const std::vector<double>& {
    auto it = entries.find(key);
    if (it == entries.end()) {
      throw ParseError(source, end_line, text.size(),
                       std::string("missing required key '") + key + "'");
    }
    if (it->second.values.size() != count) {
      throw ParseError(source, it->second.line, it->second.offset,
                       std::string("key '") + key + "' needs " + std::to_string(count) +
                           " values, found " + std::to_string(it->second.values.size()));
    }
    return it->second.values;
  };

  Calibration c;
  const auto& p2 = fetch("P2", 12);
  const auto& r0 = fetch("R0_rect", 9);
  const auto& tr = fetch("Tr_velo_to_cam", 12);
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 4; ++k) {
      c.P(r, k) = p2[r * 4 + k];
      c.Tr(r, k) = tr[r * 4 + k];
    }
    for (int k = 0; k < 3; ++k) c.R0(r, k) = r0[r * 3 + k];
  }
  if (std::abs(c.R0.determinant()) < 1e-12) {
    const auto& e = entries.find("R0_rect")->second;
    throw ParseError(source, e.line, e.offset, "R0_rect is singular");
  }
  if (std::abs(Mat3(c.Tr.leftCols<3>()).determinant()) < 1e-12) {
    const auto& e = entries.find("Tr_velo_to_cam")->second;
    throw ParseError(source, e.line, e.offset, "Tr_velo_to_cam rotation block is singular");
  }
  return c;
}

Calibration read_kitti_calib(const std::filesystem::path& path) {
  return parse_kitti_calib(read_file_bytes(path), path.string());
}

std::string format_kitti_calib(const Calibration& calib) {
  std::ostringstream os;
  os.precision(17);
  auto row = [&](const char* key, const auto& m) {
    os << key << ":";
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index k = 0; k < m.cols(); ++k) os << " " << m(r, k);
    os << "\n";
  };
  row("P2", calib.P);
  row("R0_rect", calib.R0);
  row("Tr_velo_to_cam", calib.Tr);
  return os.str();
}

// ---------------------------------------------------------------- labels

Box3D camera_to_lidar_box(const Vec3& location, double h, double w, double l, double rotation_y,
                          const Calibration& calib) {
  const Vec3 center_rect = location - Vec3(0, h / 2, 0);
  const Vec3 center = calib.rect_to_lidar(center_rect);
  const Vec3 head_rect(std::cos(rotation_y), 0, -std::sin(rotation_y));
  const Vec3 head = calib.rect_to_lidar(center_rect + head_rect) - center;
  return Box3D(center, w, l, h, normalize_yaw(std::atan2(head.y(), head.x())));
}

KittiObject lidar_box_to_kitti(const Box3D& box, const std::string& type, const Calibration& calib,
                               std::optional<double> score) {
  KittiObject obj;
  obj.type = type;
  obj.height = box.h;
  obj.width = box.w;
  obj.length = box.l;
  const Vec3 center_rect = calib.lidar_to_rect(box.center);
  obj.location = center_rect + Vec3(0, box.h / 2, 0);
  const Vec3 head = calib.lidar_to_rect(box.center + Vec3(std::cos(box.yaw), std::sin(box.yaw), 0)) -
                    center_rect;
  obj.rotation_y = normalize_yaw(std::atan2(-head.z(), head.x()));
  obj.alpha = normalize_yaw(obj.rotation_y - std::atan2(center_rect.x(), center_rect.z()));
  obj.score = score;
  obj.box = box;

  double left = 1e300, top = 1e300, right = -1e300, bottom = -1e300;
  bool any = false;
  for (const auto& c : box.bev_corners()) {
    for (double z : {box.z_min(), box.z_max()}) {
      if (auto px = project_to_image(Vec3(c.x(), c.y(), z), calib)) {
        any = true;
        left = std::min(left, px->x);
        right = std::max(right, px->x);
        top = std::min(top, px->y);
        bottom = std::max(bottom, px->y);
      }
    }
  }
  obj.bbox = any ? std::array<double, 4>{left, top, right, bottom} : std::array<double, 4>{};
  return obj;
}

std::vector<KittiObject> parse_kitti_labels(std::string_view text, const Calibration& calib,
                                            const std::string& source) {
  std::vector<KittiObject> out;
  for (const auto& line : split_lines(text)) {
    if (blank(line.text)) continue;
    const auto toks = split_tokens(line);
    if (toks.size() != 15 && toks.size() != 16) {
      throw ParseError(source, line.number, line.offset,
                       "label row needs 15 or 16 fields, found " + std::to_string(toks.size()));
    }
    std::vector<double> v;
    for (std::size_t i = 1; i < toks.size(); ++i) {
      v.push_back(parse_number(toks[i], source, line.number, "label field " + std::to_string(i + 1)));
    }
    KittiObject obj;
    obj.type = std::string(toks[0].text);
    if (obj.type == "DontCare") continue;

    auto fail = [&](std::size_t field, const std::string& msg) {
      throw ParseError(source, line.number, toks[field].offset, msg);
    };
    obj.truncation = v[0];
    if (obj.truncation < 0 || obj.truncation > 1) fail(1, "truncation outside [0, 1]");
    if (v[1] != std::floor(v[1]) || v[1] < 0 || v[1] > 3) fail(2, "occlusion must be 0, 1, 2 or 3");
    obj.occlusion = static_cast<int>(v[1]);
    obj.alpha = v[2];
    obj.bbox = {v[3], v[4], v[5], v[6]};
    if (obj.bbox[2] < obj.bbox[0] || obj.bbox[3] < obj.bbox[1]) fail(4, "2D box has negative extent");
    obj.height = v[7];
    obj.width = v[8];
    obj.length = v[9];
    for (std::size_t k = 0; k < 3; ++k) {
      if (v[7 + k] <= 0) fail(8 + k, "box dimensions must be positive");
    }
    obj.location = Vec3(v[10], v[11], v[12]);
    obj.rotation_y = v[13];
    if (toks.size() == 16) obj.score = v[14];
    obj.box = camera_to_lidar_box(obj.location, obj.height, obj.width, obj.length, obj.rotation_y,
                                  calib);
    out.push_back(std::move(obj));
  }
  return out;
}

std::vector<KittiObject> read_kitti_labels(const std::filesystem::path& path,
                                           const Calibration& calib) {
  return parse_kitti_labels(read_file_bytes(path), calib, path.string());
}

std::string format_kitti_label(const KittiObject& obj) {
  char buf[512];
  int n = std::snprintf(buf, sizeof(buf),
                        "%s %.2f %d %.6f %.2f %.2f %.2f %.2f %.6f %.6f %.6f %.6f %.6f %.6f %.6f",
                        obj.type.c_str(), obj.truncation, obj.occlusion, obj.alpha, obj.bbox[0],
                        obj.bbox[1], obj.bbox[2], obj.bbox[3], obj.height, obj.width, obj.length,
                        obj.location.x(), obj.location.y(), obj.location.z(), obj.rotation_y);
  std::string s(buf, static_cast<std::size_t>(n));
  if (obj.score) {
    std::snprintf(buf, sizeof(buf), " %.6f", *obj.score);
    s += buf;
  }
  return s;
}

std::optional<Difficulty> kitti_difficulty(const KittiObject& obj) {
  const double height = obj.bbox[3] - obj.bbox[1];
  if (height >= 40 && obj.occlusion <= 0 && obj.truncation <= 0.15) return Difficulty::Easy;
  if (height >= 25 && obj.occlusion <= 1 && obj.truncation <= 0.30) return Difficulty::Moderate;
  if (height >= 25 && obj.occlusion <= 2 && obj.truncation <= 0.50) return Difficulty::Hard;
  return std::nullopt;
}

// ---------------------------------------------------------------- netpbm

namespace {

struct NetpbmHeader {
  char kind = 0;
  std::size_t width = 0, height = 0, maxval = 0;
  std::size_t data_offset = 0;
};

NetpbmHeader parse_netpbm_header(std::string_view bytes, const std::string& source) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ParseError(source, 0, 0, "expected binary netpbm magic P5 or P6");
  }
  NetpbmHeader h;
  h.kind = bytes[1];
  std::size_t pos = 2;
  auto next_field = [&](const char* what) -> std::size_t {
    while (pos < bytes.size()) {
      if (is_space(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    std::size_t value = 0;
    auto [ptr, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), value);
    if (ec != std::errc() || ptr == bytes.data() + start) {
      throw ParseError(source, 0, start, std::string("malformed header field ") + what);
    }
    pos = static_cast<std::size_t>(ptr - bytes.data());
    return value;
  };
  h.width = next_field("width");
  h.height = next_field("height");
  h.maxval = next_field("maxval");
  if (h.width == 0 || h.height == 0) throw ParseError(source, 0, pos, "zero image dimension");
  if (h.maxval == 0 || h.maxval > 255) throw ParseError(source, 0, pos, "maxval must be in [1, 255]");
  if (pos >= bytes.size() || !is_space(bytes[pos])) {
    throw ParseError(source, 0, pos, "expected whitespace after header");
  }
  h.data_offset = pos + 1;
  const std::size_t channels = h.kind == '6' ? 3 : 1;
  const std::size_t need = h.width * h.height * channels;
  if (bytes.size() - h.data_offset < need) {
    throw ParseError(source, 0, bytes.size(),
                     "pixel data truncated: need " + std::to_string(need) + " bytes");
  }
  return h;
}

}  // namespace

Tensor parse_netpbm(std::string_view bytes, const std::string& source) {
  const auto h = parse_netpbm_header(bytes, source);
  const std::size_t c = h.kind == '6' ? 3 : 1, plane = h.width * h.height;
  std::vector<double> values(c * plane);
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data() + h.data_offset);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      values[ch * plane + i] = static_cast<double>(data[i * c + ch]) / static_cast<double>(h.maxval);
  return Tensor::from({c, h.height, h.width}, std::move(values));
}

Tensor read_netpbm(const std::filesystem::path& path) {
  return parse_netpbm(read_file_bytes(path), path.string());
}

std::string encode_pgm(const GrayImage& image) {
  if (image.pixels.size() != image.width * image.height) {
    throw std::invalid_argument("encode_pgm: pixel count does not match dimensions");
  }
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  return out;
}

GrayImage decode_pgm(std::string_view bytes, const std::string& source) {
  const auto h = parse_netpbm_header(bytes, source);
  if (h.kind != '5') throw ParseError(source, 0, 0, "expected P5 grayscale image");
  GrayImage img{h.width, h.height, {}};
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data() + h.data_offset);
  img.pixels.assign(data, data + h.width * h.height);
  return img;
}

}  // namespace cvf
