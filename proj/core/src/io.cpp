#include "hle/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace hle::io {

namespace {

constexpr char kMagic[4] = {'H', 'L', 'E', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("grid read: truncated header");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_header(std::ostream& os, int h, int w, int c, Dtype dtype) {
  if (h < 0 || w < 0 || c <= 0)
    throw std::invalid_argument("grid write: bad shape");
  os.write(kMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(h));
  put_u32(os, static_cast<std::uint32_t>(w));
  put_u32(os, static_cast<std::uint32_t>(c));
  put_u32(os, static_cast<std::uint32_t>(dtype));
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os)
    throw std::runtime_error("cannot open for writing: " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw std::runtime_error("cannot open for reading: " + path.string());
  return is;
}

std::string kind_name(bool is_thing) { return is_thing ? "thing" : "stuff"; }

bool parse_kind(const std::string& s, const std::string& where) {
  if (s == "thing") return true;
  if (s == "stuff") return false;
  throw std::runtime_error(where + ": kind must be thing|stuff, got '" + s +
                           "'");
}

std::int32_t parse_i32(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<std::int32_t>(v);
  } catch (const std::exception&) {
    throw std::runtime_error(where + ": expected an integer, got '" + s + "'");
  }
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void write_grid_i32(std::ostream& os, int height, int width, int channels,
                    std::span<const std::int32_t> data) {
  if (data.size() != static_cast<std::size_t>(height) * width * channels)
    throw std::invalid_argument("grid write: payload size mismatch");
  write_header(os, height, width, channels, Dtype::I32);
  for (std::int32_t v : data) put_u32(os, static_cast<std::uint32_t>(v));
}

void write_grid_f32(std::ostream& os, int height, int width, int channels,
                    std::span<const double> data) {
  if (data.size() != static_cast<std::size_t>(height) * width * channels)
    throw std::invalid_argument("grid write: payload size mismatch");
  write_header(os, height, width, channels, Dtype::F32);
  static_assert(sizeof(float) == 4);
  for (double v : data) {
    const float f = static_cast<float>(v);
    put_u32(os, std::bit_cast<std::uint32_t>(f));
  }
}

AnyGrid read_grid(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("grid read: bad magic (not an HLE1 record)");
  AnyGrid g;
  g.header.height = get_u32(is);
  g.header.width = get_u32(is);
  g.header.channels = get_u32(is);
  const std::uint32_t dt = get_u32(is);
  if (dt > 1) throw std::runtime_error("grid read: unknown dtype");
  g.header.dtype = static_cast<Dtype>(dt);
  if (g.header.channels == 0)
    throw std::runtime_error("grid read: zero channels");
  const std::size_t count = static_cast<std::size_t>(g.header.height) *
                            g.header.width * g.header.channels;
  if (g.header.dtype == Dtype::I32) {
    g.i32.resize(count);
    for (std::size_t i = 0; i < count; ++i)
      g.i32[i] = static_cast<std::int32_t>(get_u32(is));
  } else {
    g.f32.resize(count);
    for (std::size_t i = 0; i < count; ++i)
      g.f32[i] = std::bit_cast<float>(get_u32(is));
  }
  return g;
}

namespace {

LabelMap as_label_map(AnyGrid g, const std::string& what) {
  if (g.header.dtype != Dtype::I32 || g.header.channels != 1)
    throw std::runtime_error(what + ": expected a 1-channel int32 grid");
  LabelMap m;
  m.height = static_cast<int>(g.header.height);
  m.width = static_cast<int>(g.header.width);
  m.data = std::move(g.i32);
  return m;
}

FieldGrid as_field_grid(AnyGrid g, const std::string& what) {
  if (g.header.dtype != Dtype::F32)
    throw std::runtime_error(what + ": expected a float32 grid");
  FieldGrid f;
  f.height = static_cast<int>(g.header.height);
  f.width = static_cast<int>(g.header.width);
  f.channels = static_cast<int>(g.header.channels);
  f.data = std::move(g.f32);
  return f;
}

}  // namespace

void save_label_map(const std::filesystem::path& path, const LabelMap& m) {
  auto os = open_out(path);
  write_grid_i32(os, m.height, m.width, 1, m.data);
}

LabelMap load_label_map(const std::filesystem::path& path) {
  auto is = open_in(path);
  return as_label_map(read_grid(is), path.string());
}

void save_instance_map(const std::filesystem::path& path,
                       const InstanceMap& m) {
  auto os = open_out(path);
  write_grid_i32(os, m.height, m.width, 1, m.data);
}

InstanceMap load_instance_map(const std::filesystem::path& path) {
  auto is = open_in(path);
  LabelMap tmp = as_label_map(read_grid(is), path.string());
  InstanceMap m;
  m.height = tmp.height;
  m.width = tmp.width;
  m.data = std::move(tmp.data);
  return m;
}

void save_field_grid(const std::filesystem::path& path, const FieldGrid& g) {
  auto os = open_out(path);
  write_grid_f32(os, g.height, g.width, g.channels, g.data);
}

FieldGrid load_field_grid(const std::filesystem::path& path) {
  auto is = open_in(path);
  return as_field_grid(read_grid(is), path.string());
}

void save_fields(const std::filesystem::path& path, const PixelFields& f) {
  auto os = open_out(path);
  write_grid_f32(os, f.e.height, f.e.width, f.e.channels, f.e.data);
  write_grid_f32(os, f.sigma.height, f.sigma.width, 1, f.sigma.data);
  write_grid_f32(os, f.sigma_spatial.height, f.sigma_spatial.width, 1,
                 f.sigma_spatial.data);
  write_grid_f32(os, f.seed.height, f.seed.width, 1, f.seed.data);
}

PixelFields load_fields(const std::filesystem::path& path) {
  auto is = open_in(path);
  PixelFields f;
  f.e = as_field_grid(read_grid(is), path.string() + " (e)");
  f.sigma = as_field_grid(read_grid(is), path.string() + " (sigma)");
  f.sigma_spatial =
      as_field_grid(read_grid(is), path.string() + " (sigma_spatial)");
  f.seed = as_field_grid(read_grid(is), path.string() + " (seed)");
  for (const FieldGrid* g : {&f.sigma, &f.sigma_spatial, &f.seed}) {
    if (g->height != f.e.height || g->width != f.e.width || g->channels != 1)
      throw std::runtime_error(path.string() +
                               ": field record shapes disagree");
  }
  return f;
}

void save_state(const std::filesystem::path& path, const SemanticState& s) {
  auto os = open_out(path);
  write_grid_f32(os, s.num_classes, s.dim, 1, s.mu);
  write_grid_f32(os, s.num_classes, 1, 1, s.sigma);
}

SemanticState load_state(const std::filesystem::path& path) {
  auto is = open_in(path);
  FieldGrid mu = as_field_grid(read_grid(is), path.string() + " (mu)");
  FieldGrid sigma = as_field_grid(read_grid(is), path.string() + " (sigma)");
  if (sigma.height != mu.height || sigma.width != 1 || mu.channels != 1 ||
      sigma.channels != 1)
    throw std::runtime_error(path.string() + ": state record shapes disagree");
  SemanticState s;
  s.num_classes = mu.height;
  s.dim = mu.width;
  s.mu = std::move(mu.data);
  s.sigma = std::move(sigma.data);
  return s;
}

void save_panoptic(const std::filesystem::path& path, const PanopticMap& p) {
  {
    auto os = open_out(path);
    write_grid_i32(os, p.height, p.width, 1, p.data);
  }
  std::filesystem::path tpath = path;
  tpath += ".segments";
  auto os = open_out(tpath);
  for (const auto& s : p.segments)
    os << s.id << '\t' << s.class_id << '\t' << kind_name(s.is_thing) << '\n';
}

PanopticMap load_panoptic(const std::filesystem::path& path) {
  PanopticMap p;
  {
    auto is = open_in(path);
    LabelMap raster = as_label_map(read_grid(is), path.string());
    p.height = raster.height;
    p.width = raster.width;
    p.data = std::move(raster.data);
  }
  std::filesystem::path tpath = path;
  tpath += ".segments";
  std::ifstream is(tpath);
  if (!is)
    throw std::runtime_error("cannot open segment table: " + tpath.string());
  std::string line;
  std::set<std::int32_t> seen;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    const auto cols = split_tabs(line);
    if (cols.size() != 3)
      throw std::runtime_error(tpath.string() +
                               ": expected 3 tab-separated columns");
    SegmentInfo s;
    s.id = parse_i32(trim(cols[0]), tpath.string());
    s.class_id = parse_i32(trim(cols[1]), tpath.string());
    s.is_thing = parse_kind(trim(cols[2]), tpath.string());
    if (!seen.insert(s.id).second)
      throw std::runtime_error(tpath.string() + ": duplicate segment id " +
                               std::to_string(s.id));
    p.segments.push_back(s);
  }
  return p;
}

void save_catalog(const std::filesystem::path& path, const ClassCatalog& c) {
  auto os = open_out(path);
  for (const auto& ci : c.classes())
    os << ci.id << '\t' << ci.name << '\t'
       << kind_name(ci.kind == ClassKind::Thing) << '\n';
}

ClassCatalog load_catalog(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is)
    throw std::runtime_error("cannot open catalog: " + path.string());
  std::vector<ClassInfo> classes;
  std::string line;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    const auto cols = split_tabs(line);
    if (cols.size() != 3)
      throw std::runtime_error(path.string() +
                               ": expected 3 tab-separated columns");
    ClassInfo ci;
    ci.id = parse_i32(trim(cols[0]), path.string());
    ci.name = trim(cols[1]);
    ci.kind = parse_kind(trim(cols[2]), path.string()) ? ClassKind::Thing
                                                       : ClassKind::Stuff;
    classes.push_back(ci);
  }
  return ClassCatalog(std::move(classes));
}

std::vector<std::pair<std::string, std::string>> read_kv_config(
    const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is)
    throw std::runtime_error("cannot open config: " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const std::size_t eq = body.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected key = value");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": empty key");
    if (!seen.insert(key).second)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": duplicate key '" + key + "'");
    out.emplace_back(key, value);
  }
  return out;
}

}  // namespace hle::io
