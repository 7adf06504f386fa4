#pragma once

// File formats.
//
// CTF1 tensor: "CTF1", u32 rank, rank x u32 dims, then the row-major f32
// payload (last dimension fastest). All integers and floats little-endian.
//
// Head archive: for each of W1, b1, W2, b2 in that order an ASCII manifest
// line "<name> <byte count>\n" followed by that many bytes of CTF1 record.
//
// Boxes CSV: header image_id,class_id,x,y,w,h,score; the score column (or an
// empty score cell) may be omitted for ground truths.

#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "cen/error.hpp"
#include "cen/fusion.hpp"
#include "cen/geometry.hpp"
#include "cen/pipeline.hpp"
#include "cen/tensor.hpp"
#include "cen/transform.hpp"

namespace cen::io {

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t& pos) {
  if (in.size() < pos + 4) throw InputError("truncated CTF1 data");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

inline std::string slurp(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  return out;
}

}  // namespace detail

inline std::string encode_ctf(const Tensor& t) {
  cen::detail::require(t.data.size() == t.element_count(), "tensor data length does not match its dims");
  std::string out = "CTF1";
  out.reserve(8 + 4 * t.dims.size() + 4 * t.data.size());
  detail::put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) detail::put_u32(out, d);
  for (float v : t.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

/// Decodes one record starting at `pos`; advances `pos` past it.
inline Tensor decode_ctf(std::string_view in, std::size_t& pos) {
  if (in.substr(pos, 4) != "CTF1") throw InputError("missing CTF1 magic");
  pos += 4;
  Tensor t;
  const std::uint32_t rank = detail::get_u32(in, pos);
  if (rank > 16) throw InputError("implausible CTF1 rank");
  for (std::uint32_t i = 0; i < rank; ++i) t.dims.push_back(detail::get_u32(in, pos));
  const std::size_t n = t.element_count();
  if ((in.size() - pos) / 4 < n) throw InputError("truncated CTF1 payload");
  t.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.data[i] = std::bit_cast<float>(detail::get_u32(in, pos));
  return t;
}

inline Tensor decode_ctf(std::string_view in) {
  std::size_t pos = 0;
  Tensor t = decode_ctf(in, pos);
  if (pos != in.size()) throw InputError("trailing bytes after CTF1 record");
  return t;
}

inline void save_ctf(const std::string& path, const Tensor& t) { detail::open_out(path) << encode_ctf(t); }
inline Tensor load_ctf(const std::string& path) {
  auto in = detail::open_in(path);
  return decode_ctf(detail::slurp(in));
}

inline Tensor to_tensor(const FeatureMap& f) {
  Tensor t{{static_cast<std::uint32_t>(f.channels), static_cast<std::uint32_t>(f.height),
            static_cast<std::uint32_t>(f.width)},
           {}};
  t.data.assign(f.data.begin(), f.data.end());
  return t;
}

inline FeatureMap to_feature_map(const Tensor& t, int stride) {
  if (t.dims.size() != 3) throw InputError("feature map tensor must have rank 3 (C, H, W)");
  FeatureMap f(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]), stride);
  f.data.assign(t.data.begin(), t.data.end());
  f.validate();
  return f;
}

inline Tensor to_tensor(const ProbabilityMap& p) {
  Tensor t{{static_cast<std::uint32_t>(p.classes), static_cast<std::uint32_t>(p.grid_h),
            static_cast<std::uint32_t>(p.grid_w)},
           {}};
  t.data.assign(p.values.begin(), p.values.end());
  return t;
}

inline ProbabilityMap to_probability_map(const Tensor& t) {
  if (t.dims.size() != 3) throw InputError("probability map tensor must have rank 3 (m, H/32, W/32)");
  ProbabilityMap p(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]));
  p.values.assign(t.data.begin(), t.data.end());
  p.validate();
  return p;
}

inline Tensor to_tensor(std::span<const double> v) {
  Tensor t{{static_cast<std::uint32_t>(v.size())}, {}};
  t.data.assign(v.begin(), v.end());
  return t;
}

inline FeatureVector to_vector(const Tensor& t) {
  if (t.dims.size() != 1) throw InputError("feature vector tensor must have rank 1");
  return FeatureVector(t.data.begin(), t.data.end());
}

namespace detail {

inline Tensor matrix_tensor(const Eigen::MatrixXd& m) {
  Tensor t{{static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, {}};
  t.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(static_cast<float>(m(r, c)));
  return t;
}

inline Eigen::MatrixXd tensor_matrix(const Tensor& t, const std::string& name) {
  if (t.dims.size() != 2) throw InputError(name + " must have rank 2");
  Eigen::MatrixXd m(t.dims[0], t.dims[1]);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.data[static_cast<std::size_t>(r * m.cols() + c)];
  return m;
}

inline Eigen::VectorXd tensor_vector(const Tensor& t, const std::string& name) {
  if (t.dims.size() != 1) throw InputError(name + " must have rank 1");
  Eigen::VectorXd v(t.dims[0]);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = t.data[static_cast<std::size_t>(i)];
  return v;
}

inline constexpr std::array<const char*, 4> kHeadTensorNames{"W1", "b1", "W2", "b2"};

}  // namespace detail

inline std::string encode_head(const HeadWeights& w) {
  const std::array<Tensor, 4> parts{detail::matrix_tensor(w.w1), to_tensor(std::span<const double>(w.b1.data(), w.b1.size())),
                                    detail::matrix_tensor(w.w2), to_tensor(std::span<const double>(w.b2.data(), w.b2.size()))};
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::string blob = encode_ctf(parts[i]);
    out += std::string(detail::kHeadTensorNames[i]) + " " + std::to_string(blob.size()) + "\n";
    out += blob;
  }
  return out;
}

inline HeadWeights decode_head(std::string_view in) {
  HeadWeights w;
  std::size_t pos = 0;
  for (const char* expected : detail::kHeadTensorNames) {
    const std::size_t eol = in.find('\n', pos);
    if (eol == std::string_view::npos) throw InputError("truncated head archive manifest");
    const std::string line(in.substr(pos, eol - pos));
    std::istringstream ls(line);
    std::string name;
    std::size_t bytes = 0;
    if (!(ls >> name >> bytes) || name != expected) {
      throw InputError("head archive: expected manifest for " + std::string(expected));
    }
    pos = eol + 1;
    if (in.size() - pos < bytes) throw InputError("head archive: truncated " + name);
    const Tensor t = decode_ctf(in.substr(pos, bytes));
    pos += bytes;
    if (name == "W1") w.w1 = detail::tensor_matrix(t, name);
    if (name == "b1") w.b1 = detail::tensor_vector(t, name);
    if (name == "W2") w.w2 = detail::tensor_matrix(t, name);
    if (name == "b2") w.b2 = detail::tensor_vector(t, name);
  }
  if (pos != in.size()) throw InputError("head archive: trailing bytes");
  return w;
}

inline void save_head(const std::string& path, const HeadWeights& w) { detail::open_out(path) << encode_head(w); }
inline HeadWeights load_head(const std::string& path) {
  auto in = detail::open_in(path);
  return decode_head(detail::slurp(in));
}

/// Shortest decimal that parses back to the same double.
inline std::string format_number(double v) {
  if (v == 0.0) v = 0.0;  // no "-0"
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline double parse_number(std::string_view s, const std::string& what) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InputError("invalid number for " + what + ": '" + std::string(s) + "'");
  }
  return v;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t p = s.find(sep, start);
    out.emplace_back(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

inline std::vector<double> parse_list(std::string_view s, std::size_t expected, const std::string& what) {
  const auto parts = split(s, ',');
  if (parts.size() != expected) {
    throw InputError(what + " needs " + std::to_string(expected) + " comma-separated values");
  }
  std::vector<double> v;
  for (const auto& p : parts) v.push_back(parse_number(p, what));
  return v;
}

inline BoundingBox parse_box(std::string_view s) {
  const auto v = parse_list(s, 4, "box");
  const BoundingBox b{v[0], v[1], v[2], v[3]};
  cen::detail::require(b.valid(), "box needs finite coordinates and positive size");
  return b;
}

inline SpineLine parse_line(std::string_view s) {
  const auto v = parse_list(s, 3, "line");
  return SpineLine::from_coefficients(v[0], v[1], v[2]);
}

/// Five whitespace-separated decimals: sx sy tx ty theta.
inline StnParams parse_stn_params(std::string_view s) {
  std::istringstream in{std::string(s)};
  std::array<double, StnParams::kCount> v{};
  std::string tok;
  for (auto& x : v) {
    if (!(in >> tok)) throw InputError("STN parameters need 5 values: sx sy tx ty theta");
    x = parse_number(tok, "STN parameter");
  }
  if (in >> tok) throw InputError("STN parameters need exactly 5 values");
  return StnParams::make(v[0], v[1], v[2], v[3], v[4]);
}

inline std::string format_stn_params(const StnParams& p) {
  return format_number(p.sx) + " " + format_number(p.sy) + " " + format_number(p.tx) + " " + format_number(p.ty) +
         " " + format_number(p.theta);
}

struct BoxRecord {
  std::string image_id;
  int class_id = 0;
  BoundingBox box;
  std::optional<double> score;
};

inline constexpr std::string_view kBoxesHeader = "image_id,class_id,x,y,w,h,score";

inline std::vector<BoxRecord> read_boxes_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("boxes CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line, ',');
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* need : {"image_id", "class_id", "x", "y", "w", "h"}) {
    if (!col.count(need)) throw InputError(std::string("boxes CSV header lacks column ") + need);
  }
  const bool has_score = col.count("score") > 0;

  std::vector<BoxRecord> out;
  for (int lineno = 2; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    const auto where = " (line " + std::to_string(lineno) + ")";
    for (const char* need : {"image_id", "class_id", "x", "y", "w", "h"}) {
      if (col.at(need) >= cells.size()) throw InputError("boxes CSV row has too few columns" + where);
    }
    const auto cell = [&](const char* name) { return std::string_view(cells[col.at(name)]); };
    BoxRecord r;
    r.image_id = std::string(cell("image_id"));
    const double cls = parse_number(cell("class_id"), "class_id" + where);
    if (cls != std::floor(cls)) throw InputError("class_id must be an integer" + where);
    r.class_id = static_cast<int>(cls);
    r.box = {parse_number(cell("x"), "x" + where), parse_number(cell("y"), "y" + where),
             parse_number(cell("w"), "w" + where), parse_number(cell("h"), "h" + where)};
    if (!r.box.valid()) throw InputError("box needs finite coordinates and positive size" + where);
    if (has_score && col["score"] < cells.size() && !cells[col["score"]].empty()) {
      r.score = parse_number(cells[col["score"]], "score" + where);
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<BoxRecord> load_boxes_csv(const std::string& path) {
  auto in = detail::open_in(path);
  return read_boxes_csv(in);
}

inline void write_boxes_csv(std::ostream& out, const std::vector<BoxRecord>& rows) {
  out << kBoxesHeader << '\n';
  for (const auto& r : rows) {
    out << r.image_id << ',' << r.class_id << ',' << format_number(r.box.x) << ',' << format_number(r.box.y) << ','
        << format_number(r.box.w) << ',' << format_number(r.box.h) << ',';
    if (r.score) out << format_number(*r.score);
    out << '\n';
  }
}

inline void save_boxes_csv(const std::string& path, const std::vector<BoxRecord>& rows) {
  auto out = detail::open_out(path);
  write_boxes_csv(out, rows);
}

/// 8-bit grayscale raster.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;
};

inline GrayImage read_pgm(std::istream& in) {
  const auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(ch);
    }
    return t;
  };
  if (token() != "P5") throw InputError("not a binary PGM (P5) file");
  GrayImage img;
  const double w = parse_number(token(), "PGM width"), h = parse_number(token(), "PGM height");
  const double maxval = parse_number(token(), "PGM maxval");
  if (w < 0 || h < 0 || maxval < 1 || maxval > 255) throw InputError("unsupported PGM header");
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.data.resize(static_cast<std::size_t>(img.width) * img.height);
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.data.size())) throw InputError("truncated PGM pixel data");
  return img;
}

inline void write_pgm(std::ostream& out, const GrayImage& img) {
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
}

inline BinaryMask to_mask(const GrayImage& img) {
  BinaryMask m(img.width, img.height);
  for (std::size_t i = 0; i < img.data.size(); ++i) m.data[i] = img.data[i] != 0 ? 1 : 0;
  return m;
}

inline GrayImage to_image(const BinaryMask& m) {
  GrayImage img{m.width, m.height, {}};
  img.data.reserve(m.data.size());
  for (auto v : m.data) img.data.push_back(v ? 255 : 0);
  return img;
}

inline BinaryMask load_mask(const std::string& path) {
  auto in = detail::open_in(path);
  return to_mask(read_pgm(in));
}

inline void save_pgm(const std::string& path, const GrayImage& img) {
  auto out = detail::open_out(path);
  write_pgm(out, img);
}

/// `key = value` lines; `#` starts a comment. Later keys override earlier.
inline std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  const auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw InputError("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

struct MetricRow {
  std::string metric;
  std::string cls;        // class id or "all"
  std::string threshold;  // empty when not applicable
  double value = 0.0;
};

inline void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
  out << "metric,class,threshold,value\n";
  for (const auto& r : rows) out << r.metric << ',' << r.cls << ',' << r.threshold << ',' << format_number(r.value) << '\n';
}

}  // namespace cen::io
