#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_set>
#include <vector>

#include "cvl/conv.hpp"
#include "cvl/error.hpp"
#include "cvl/eval.hpp"
#include "cvl/feature_map.hpp"
#include "cvl/geometry.hpp"

namespace cvl::io {

namespace fs = std::filesystem;

inline constexpr std::array<char, 4> kTensorMagic{'C', 'V', 'L', 'T'};
inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr std::string_view kMaskSuffix = ".mask";
inline constexpr std::string_view kBiasSuffix = ".bias";

// Row-major float32 tensor, last dimension fastest.
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
}  // namespace detail

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(ErrorCode::IoError, "read failed for '" + path.string() + "'");
  return ss.str();
}

inline void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorCode::IoError, "cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "write failed for '" + path.string() + "'");
}

inline std::string encode_tensor(const Tensor& t) {
  require(t.values.size() == t.element_count(), ErrorCode::DimensionMismatch, "tensor payload does not match dims");
  std::string out(kTensorMagic.begin(), kTensorMagic.end());
  detail::put_u32(out, kTensorVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) detail::put_u32(out, d);
  out.reserve(out.size() + 4 * t.values.size());
  for (float v : t.values) {
    require(std::isfinite(v), ErrorCode::FormatError, "tensor values must be finite");
    detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline Tensor decode_tensor(std::string_view bytes, const std::string& context = "tensor") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  require(bytes.size() >= 12 && std::equal(kTensorMagic.begin(), kTensorMagic.end(), bytes.begin()),
          ErrorCode::FormatError, context + ": missing CVLT header");
  require(detail::get_u32(p + 4) == kTensorVersion, ErrorCode::FormatError, context + ": unsupported version");
  const std::uint32_t ndim = detail::get_u32(p + 8);
  require(bytes.size() >= 12 + 4ull * ndim, ErrorCode::FormatError, context + ": truncated dims");
  Tensor t;
  for (std::uint32_t i = 0; i < ndim; ++i) t.dims.push_back(detail::get_u32(p + 12 + 4 * i));
  const std::size_t count = t.element_count();
  const std::size_t offset = 12 + 4ull * ndim;
  require(bytes.size() == offset + 4 * count, ErrorCode::FormatError,
          context + ": payload is " + std::to_string(bytes.size() - offset) + " bytes, expected " +
              std::to_string(4 * count));
  t.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    t.values[i] = std::bit_cast<float>(detail::get_u32(p + offset + 4 * i));
    require(std::isfinite(t.values[i]), ErrorCode::FormatError, context + ": non-finite value");
  }
  return t;
}

inline void write_tensor(const fs::path& path, const Tensor& t) { write_file(path, encode_tensor(t)); }
inline Tensor read_tensor(const fs::path& path) { return decode_tensor(read_file(path), path.string()); }

inline fs::path sibling(const fs::path& path, std::string_view suffix) {
  fs::path out = path;
  out += std::string(suffix);
  return out;
}

// Feature map as an [H, W, C] tensor plus an [H, W] ".mask" sibling.
template <typename T>
void write_feature_map(const fs::path& path, const FeatureMap<T>& map) {
  Tensor data{{static_cast<std::uint32_t>(map.height()), static_cast<std::uint32_t>(map.width()),
               static_cast<std::uint32_t>(map.channels())},
              {}};
  data.values.reserve(map.data().size());
  for (auto v : map.data()) data.values.push_back(static_cast<float>(v));
  Tensor mask{{static_cast<std::uint32_t>(map.height()), static_cast<std::uint32_t>(map.width())}, {}};
  mask.values.reserve(map.pixels());
  for (auto m : map.mask()) mask.values.push_back(m ? 1.0f : 0.0f);
  write_tensor(path, data);
  write_tensor(sibling(path, kMaskSuffix), mask);
}

// Reads a feature map; a missing mask file means every pixel is valid.
// Accepts [H, W] tensors as single-channel maps.
template <typename T = double>
FeatureMap<T> read_feature_map(const fs::path& path) {
  const Tensor data = read_tensor(path);
  require(data.dims.size() == 3 || data.dims.size() == 2, ErrorCode::DimensionMismatch,
          path.string() + ": expected an [H, W, C] tensor");
  const std::size_t channels = data.dims.size() == 3 ? data.dims[2] : 1;
  FeatureMap<T> map(data.dims[0], data.dims[1], channels, true);
  auto dst = map.data();
  for (std::size_t i = 0; i < data.values.size(); ++i) dst[i] = static_cast<T>(data.values[i]);
  const fs::path mask_path = sibling(path, kMaskSuffix);
  if (fs::exists(mask_path)) {
    const Tensor mask = read_tensor(mask_path);
    require(mask.dims.size() == 2 && mask.dims[0] == data.dims[0] && mask.dims[1] == data.dims[1],
            ErrorCode::DimensionMismatch, mask_path.string() + ": mask shape does not match data");
    auto m = map.mask();
    for (std::size_t i = 0; i < mask.values.size(); ++i) {
      require(mask.values[i] == 0.0f || mask.values[i] == 1.0f, ErrorCode::FormatError,
              mask_path.string() + ": mask values must be 0 or 1");
      m[i] = mask.values[i] != 0.0f;
    }
  }
  map.apply_mask();
  return map;
}

// Conv stack files: kernel [2, 3, 3, C_in, C_out] and a ".bias" sibling
// [2, C_out]. Layer 1 maps C_in -> C_out. Layer 2 maps C_out -> C_out and
// reads the first C_out input rows of its slice; when C_in > C_out the
// remaining rows must be zero.
inline void write_conv_stack(const fs::path& path, const ConvStack& stack) {
  stack.validate();
  const std::size_t cin = stack.first.in_channels;
  const std::size_t cout = stack.first.out_channels;
  require(stack.second.out_channels == cout && cin >= cout, ErrorCode::DimensionMismatch,
          "conv stack shape is not representable as [2, 3, 3, C_in, C_out]");
  Tensor kernel{{2, 3, 3, static_cast<std::uint32_t>(cin), static_cast<std::uint32_t>(cout)},
                std::vector<float>(2 * 9 * cin * cout, 0.0f)};
  for (std::size_t ky = 0; ky < 3; ++ky)
    for (std::size_t kx = 0; kx < 3; ++kx)
      for (std::size_t co = 0; co < cout; ++co) {
        for (std::size_t ci = 0; ci < cin; ++ci)
          kernel.values[(((0 * 3 + ky) * 3 + kx) * cin + ci) * cout + co] =
              static_cast<float>(stack.first.weight(ky, kx, ci, co));
        for (std::size_t ci = 0; ci < cout; ++ci)
          kernel.values[(((1 * 3 + ky) * 3 + kx) * cin + ci) * cout + co] =
              static_cast<float>(stack.second.weight(ky, kx, ci, co));
      }
  Tensor bias{{2, static_cast<std::uint32_t>(cout)}, {}};
  for (double b : stack.first.bias) bias.values.push_back(static_cast<float>(b));
  for (double b : stack.second.bias) bias.values.push_back(static_cast<float>(b));
  write_tensor(path, kernel);
  write_tensor(sibling(path, kBiasSuffix), bias);
}

inline ConvStack read_conv_stack(const fs::path& path) {
  const Tensor kernel = read_tensor(path);
  require(kernel.dims.size() == 5 && kernel.dims[0] == 2 && kernel.dims[1] == 3 && kernel.dims[2] == 3,
          ErrorCode::DimensionMismatch, path.string() + ": expected [2, 3, 3, C_in, C_out]");
  const std::size_t cin = kernel.dims[3];
  const std::size_t cout = kernel.dims[4];
  require(cin >= cout && cout > 0, ErrorCode::DimensionMismatch, path.string() + ": need C_in >= C_out > 0");
  const fs::path bias_path = sibling(path, kBiasSuffix);
  const Tensor bias = read_tensor(bias_path);
  require(bias.dims == std::vector<std::uint32_t>{2, static_cast<std::uint32_t>(cout)}, ErrorCode::DimensionMismatch,
          bias_path.string() + ": expected [2, C_out]");
  ConvStack stack{ConvLayer(cin, cout), ConvLayer(cout, cout), true};
  for (std::size_t ky = 0; ky < 3; ++ky)
    for (std::size_t kx = 0; kx < 3; ++kx)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t co = 0; co < cout; ++co) {
          stack.first.weight(ky, kx, ci, co) = kernel.values[(((0 * 3 + ky) * 3 + kx) * cin + ci) * cout + co];
          const float w2 = kernel.values[(((1 * 3 + ky) * 3 + kx) * cin + ci) * cout + co];
          if (ci < cout)
            stack.second.weight(ky, kx, ci, co) = w2;
          else
            require(w2 == 0.0f, ErrorCode::FormatError, path.string() + ": unused layer-2 rows must be zero");
        }
  for (std::size_t co = 0; co < cout; ++co) {
    stack.first.bias[co] = bias.values[co];
    stack.second.bias[co] = bias.values[cout + co];
  }
  return stack;
}

// ---- text helpers ----------------------------------------------------------

// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) fail(ErrorCode::FormatError, "cannot format number");
  return std::string(buf.data(), end);
}

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split(std::string_view line, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view s, const std::string& context) {
  s = trim(s);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc{} && ptr == s.data() + s.size(), ErrorCode::FormatError,
          context + ": '" + std::string(s) + "' is not a number");
  return v;
}

inline long long parse_int(std::string_view s, const std::string& context) {
  s = trim(s);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc{} && ptr == s.data() + s.size(), ErrorCode::FormatError,
          context + ": '" + std::string(s) + "' is not an integer");
  return v;
}

// Non-empty, non-comment lines of a text file with 1-based line numbers.
inline std::vector<std::pair<std::size_t, std::string>> content_lines(const std::string& text) {
  std::vector<std::pair<std::size_t, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    out.emplace_back(number, std::string(t));
  }
  return out;
}

// CSV writer: LF endings, fields must not contain separators.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row(header); }

  void row(const std::vector<std::string>& fields) {
    require(fields.size() == columns_, ErrorCode::FormatError, "CSV row has the wrong number of fields");
    for (std::size_t i = 0; i < fields.size(); ++i) {
      require(fields[i].find_first_of(",\n\r\"") == std::string::npos, ErrorCode::FormatError,
              "CSV field '" + fields[i] + "' contains a reserved character");
      if (i) text_ += ',';
      text_ += fields[i];
    }
    text_ += '\n';
  }

  const std::string& str() const { return text_; }
  void save(const fs::path& path) const { write_file(path, text_); }

 private:
  std::size_t columns_;
  std::string text_;
};

// CSV with a header row, read into string cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;

  std::size_t column(std::string_view name, const std::string& context) const {
    auto it = std::find(header.begin(), header.end(), name);
    require(it != header.end(), ErrorCode::FormatError, context + ": missing column '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline CsvTable read_csv(const fs::path& path) {
  const auto lines = content_lines(read_file(path));
  require(!lines.empty(), ErrorCode::FormatError, path.string() + ": empty CSV");
  CsvTable table;
  table.header = split(lines.front().second);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto fields = split(lines[i].second);
    require(fields.size() == table.header.size(), ErrorCode::FormatError,
            path.string() + ":" + std::to_string(lines[i].first) + ": expected " +
                std::to_string(table.header.size()) + " fields");
    table.rows.push_back(std::move(fields));
    table.line_numbers.push_back(lines[i].first);
  }
  return table;
}

// ---- database manifest -----------------------------------------------------

struct ManifestEntry {
  std::string id;
  fs::path tensor_path;  // resolved against the manifest directory
  GeoPoint position;
};

// Records "id,path,lat,lon"; '#' starts a comment line.
inline std::vector<ManifestEntry> read_manifest(const fs::path& path, bool check_paths = true) {
  const auto lines = content_lines(read_file(path));
  std::vector<ManifestEntry> entries;
  std::unordered_set<std::string> ids;
  const fs::path base = path.parent_path();
  for (const auto& [number, line] : lines) {
    const std::string where = path.string() + ":" + std::to_string(number);
    const auto f = split(line);
    require(f.size() == 4, ErrorCode::FormatError, where + ": expected id,path,lat,lon");
    if (entries.empty() && f[0] == "id" && f[2] == "lat") continue;  // optional header
    ManifestEntry e{f[0], base / f[1], {parse_double(f[2], where), parse_double(f[3], where)}};
    e.position.validate();
    require(!e.id.empty() && ids.insert(e.id).second, ErrorCode::FormatError, where + ": duplicate or empty id");
    if (check_paths)
      require(fs::exists(e.tensor_path), ErrorCode::IoError, where + ": missing tensor '" + e.tensor_path.string() + "'");
    entries.push_back(std::move(e));
  }
  return entries;
}

inline std::string format_manifest(const std::vector<ManifestEntry>& entries, const fs::path& base) {
  std::string out = "# id,path,lat,lon\n";
  for (const auto& e : entries) {
    out += e.id + "," + e.tensor_path.lexically_relative(base).generic_string() + "," + format_double(e.position.lat) +
           "," + format_double(e.position.lon) + "\n";
  }
  return out;
}

// ---- camera files ----------------------------------------------------------

inline void write_poses(const fs::path& path, const std::vector<RigidPose>& poses) {
  CsvWriter csv({"frame", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "tx", "ty", "tz"});
  for (const auto& p : poses) {
    std::vector<std::string> row{std::to_string(p.timestamp_index)};
    for (const auto& r : p.rotation)
      for (double v : r) row.push_back(format_double(v));
    for (double v : p.translation) row.push_back(format_double(v));
    csv.row(row);
  }
  csv.save(path);
}

inline std::vector<RigidPose> read_poses(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const std::array<const char*, 12> names{"r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "tx", "ty", "tz"};
  std::vector<RigidPose> poses;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::string where = path.string() + ":" + std::to_string(t.line_numbers[i]);
    RigidPose p;
    p.timestamp_index = static_cast<std::size_t>(parse_int(t.rows[i][t.column("frame", where)], where));
    for (std::size_t k = 0; k < 9; ++k) p.rotation[k / 3][k % 3] = parse_double(t.rows[i][t.column(names[k], where)], where);
    for (std::size_t k = 0; k < 3; ++k) p.translation[k] = parse_double(t.rows[i][t.column(names[9 + k], where)], where);
    p.validate(1e-6);
    poses.push_back(p);
  }
  return poses;
}

inline void write_intrinsics(const fs::path& path, const std::vector<CameraIntrinsics>& ks) {
  CsvWriter csv({"frame", "fx", "fy", "cx", "cy", "width", "height"});
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const auto& k = ks[i];
    csv.row({std::to_string(i + 1), format_double(k.fx), format_double(k.fy), format_double(k.cx), format_double(k.cy),
             std::to_string(k.width), std::to_string(k.height)});
  }
  csv.save(path);
}

inline std::vector<CameraIntrinsics> read_intrinsics(const fs::path& path) {
  const CsvTable t = read_csv(path);
  std::vector<CameraIntrinsics> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::string where = path.string() + ":" + std::to_string(t.line_numbers[i]);
    const auto& r = t.rows[i];
    CameraIntrinsics k{parse_double(r[t.column("fx", where)], where),
                       parse_double(r[t.column("fy", where)], where),
                       parse_double(r[t.column("cx", where)], where),
                       parse_double(r[t.column("cy", where)], where),
                       static_cast<std::size_t>(parse_int(r[t.column("width", where)], where)),
                       static_cast<std::size_t>(parse_int(r[t.column("height", where)], where))};
    k.validate();
    out.push_back(k);
  }
  return out;
}

// ---- key=value configuration -------------------------------------------------

class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text, const std::string& context = "config") {
    Config c;
    for (const auto& [number, line] : content_lines(text)) {
      const auto eq = line.find('=');
      require(eq != std::string::npos, ErrorCode::FormatError,
              context + ":" + std::to_string(number) + ": expected key=value");
      c.set(std::string(trim(std::string_view(line).substr(0, eq))),
            std::string(trim(std::string_view(line).substr(eq + 1))));
    }
    return c;
  }

  static Config load(const fs::path& path) { return parse(read_file(path), path.string()); }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_double(it->second, "config key '" + key + "'");
  }
  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_int(it->second, "config key '" + key + "'");
  }

  std::string str() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

// ---- binary PGM (P5, 8-bit) for image-level demos -----------------------------

inline FeatureMap<double> read_pgm(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::istringstream in(bytes);
  std::string magic;
  in >> magic;
  require(magic == "P5", ErrorCode::FormatError, path.string() + ": only binary P5 PGM is supported");
  auto next_int = [&]() {
    while (in >> std::ws && in.peek() == '#') in.ignore(1 << 20, '\n');
    long v = -1;
    in >> v;
    return v;
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  require(w > 0 && h > 0 && maxval > 0 && maxval < 256, ErrorCode::FormatError, path.string() + ": bad PGM header");
  in.get();
  const auto offset = static_cast<std::size_t>(in.tellg());
  require(bytes.size() >= offset + static_cast<std::size_t>(w * h), ErrorCode::FormatError,
          path.string() + ": truncated PGM");
  FeatureMap<double> map(static_cast<std::size_t>(h), static_cast<std::size_t>(w), 1, true);
  for (long i = 0; i < w * h; ++i)
    map.data()[static_cast<std::size_t>(i)] =
        static_cast<unsigned char>(bytes[offset + static_cast<std::size_t>(i)]) / static_cast<double>(maxval);
  return map;
}

// Writes channel 0 clamped to [0, 1]; masked pixels are black.
template <typename T>
void write_pgm(const fs::path& path, const FeatureMap<T>& map) {
  std::string out = "P5\n" + std::to_string(map.width()) + " " + std::to_string(map.height()) + "\n255\n";
  for (std::size_t r = 0; r < map.height(); ++r)
    for (std::size_t c = 0; c < map.width(); ++c) {
      const double v = map.valid(r, c) ? std::clamp(static_cast<double>(map.at(r, c, 0)), 0.0, 1.0) : 0.0;
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  write_file(path, out);
}

}  // namespace cvl::io
