#include "airwayseg/volio.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "airwayseg/error.hpp"

namespace airwayseg::io {
namespace fs = std::filesystem;

std::string to_string(ContentKind kind) {
  switch (kind) {
    case ContentKind::Labels: return "labels";
    case ContentKind::Probabilities: return "probabilities";
    case ContentKind::Tensor: return "tensor";
    case ContentKind::Heatmap: return "heatmap";
    case ContentKind::Variance: return "variance";
  }
  return "?";
}

std::size_t VolumeHeader::element_count() const {
  std::size_t n = channels;
  for (auto d : dim_sizes) n *= d;
  return n;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
bool parse_number(const std::string& tok, T& out) {
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

[[noreturn]] void header_error(const fs::path& path, int line, const std::string& field, const std::string& what) {
  std::ostringstream os;
  os << path.string() << ": line " << line << ": field '" << field << "': " << what;
  throw FormatError(os.str());
}

std::optional<ContentKind> parse_kind(const std::string& s) {
  for (auto k : {ContentKind::Labels, ContentKind::Probabilities, ContentKind::Tensor, ContentKind::Heatmap,
                 ContentKind::Variance}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

std::string encode_classes(const ClassTable& t) {
  std::string out;
  for (const auto& e : t.entries()) {
    if (e.name.find_first_of(";:\n") != std::string::npos) {
      throw Error("class name '" + e.name + "' cannot contain ';', ':' or newlines");
    }
    if (!out.empty()) out += ';';
    out += std::to_string(e.id) + ":" + e.name;
  }
  return out;
}

std::vector<char> read_payload(const VolumeHeader& h) {
  std::ifstream in(h.data_file, std::ios::binary);
  if (!in) throw FormatError("cannot open raw payload " + h.data_file.string());
  std::error_code ec;
  const auto size = fs::file_size(h.data_file, ec);
  if (ec) throw FormatError("cannot stat raw payload " + h.data_file.string());
  const std::size_t expected = h.element_count() * h.element_size();
  if (size != expected) {
    throw FormatError("size mismatch: header declares " + std::to_string(expected) + " bytes, " +
                      h.data_file.string() + " has " + std::to_string(size));
  }
  std::vector<char> bytes(expected);
  if (expected > 0 && !in.read(bytes.data(), static_cast<std::streamsize>(expected))) {
    throw FormatError("short read from " + h.data_file.string());
  }
  return bytes;
}

std::vector<double> decode_doubles(const std::vector<char>& bytes, bool msb) {
  std::vector<double> out(bytes.size() / 8);
  const bool swap = msb != (std::endian::native == std::endian::big);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t u;
    std::memcpy(&u, bytes.data() + 8 * i, 8);
    if (swap) u = __builtin_bswap64(u);
    std::memcpy(&out[i], &u, 8);
  }
  return out;
}

void write_doubles(std::ofstream& out, std::span<const double> values) {
  std::vector<char> bytes(values.size() * 8);
  const bool swap = std::endian::native == std::endian::big;
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t u;
    std::memcpy(&u, &values[i], 8);
    if (swap) u = __builtin_bswap64(u);
    std::memcpy(bytes.data() + 8 * i, &u, 8);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Dims dims_of(const VolumeHeader& h) {
  Dims d;
  d.nx = h.dim_sizes[0];
  d.ny = h.dim_sizes[1];
  d.nz = h.ndims == 3 ? h.dim_sizes[2] : 1;
  return d;
}

VoxelSpacing spacing_of(const VolumeHeader& h) {
  return VoxelSpacing(h.spacing[0], h.spacing[1], h.ndims == 3 ? h.spacing[2] : 1.0);
}

fs::path raw_path_for(const fs::path& header_path) {
  if (header_path.extension() != ".mhd") throw Error("volume header path must end in .mhd: " + header_path.string());
  auto raw = header_path;
  raw.replace_extension(".raw");
  return raw;
}

struct HeaderFields {
  int ndims;
  std::vector<std::size_t> dims;
  std::vector<double> spacing;
  ElementType type;
  ContentKind kind;
  std::size_t channels;
  const ClassTable* classes;
};

void write_header_and_open(const fs::path& header_path, const HeaderFields& f, std::ofstream& raw_out) {
  const fs::path raw = raw_path_for(header_path);
  std::ostringstream h;
  h << "ObjectType = Image\n";
  h << "NDims = " << f.ndims << "\n";
  h << "DimSize =";
  for (int a = 0; a < f.ndims; ++a) h << ' ' << f.dims[static_cast<std::size_t>(a)];
  h << "\nElementSpacing =";
  for (int a = 0; a < f.ndims; ++a) h << ' ' << shortest(f.spacing[static_cast<std::size_t>(a)]);
  h << "\nElementType = " << (f.type == ElementType::UInt8 ? "MET_UCHAR" : "MET_DOUBLE") << "\n";
  h << "BinaryData = True\n";
  h << "BinaryDataByteOrderMSB = False\n";
  h << "ContentKind = " << to_string(f.kind) << "\n";
  h << "ChannelCount = " << f.channels << "\n";
  if (f.classes) h << "ClassTable = " << encode_classes(*f.classes) << "\n";
  h << "ElementDataFile = " << raw.filename().string() << "\n";

  std::ofstream hout(header_path, std::ios::binary | std::ios::trunc);
  if (!hout) throw Error("cannot write " + header_path.string());
  const std::string text = h.str();
  hout.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!hout) throw Error("cannot write " + header_path.string());
  raw_out.open(raw, std::ios::binary | std::ios::trunc);
  if (!raw_out) throw Error("cannot write " + raw.string());
}

void finish(std::ofstream& out, const fs::path& header_path) {
  out.flush();
  if (!out) throw Error("failed writing payload for " + header_path.string());
}

}  // namespace

VolumeHeader read_header(const fs::path& header_path) {
  std::ifstream in(header_path);
  if (!in) throw FormatError("cannot open header " + header_path.string());
  VolumeHeader h;
  bool have_ndims = false, have_dims = false, have_type = false, have_file = false, have_kind = false;
  std::vector<std::string> dim_tokens, spacing_tokens;
  int dims_line = 0, spacing_line = 0;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) header_error(header_path, lineno, t, "expected 'Key = Value'");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key == "NDims") {
      if (!parse_number(value, h.ndims) || h.ndims < 2 || h.ndims > 3) {
        header_error(header_path, lineno, key, "expected 2 or 3, got '" + value + "'");
      }
      have_ndims = true;
    } else if (key == "DimSize") {
      dim_tokens = split_ws(value);
      dims_line = lineno;
      have_dims = true;
    } else if (key == "ElementSpacing" || key == "ElementSize") {
      spacing_tokens = split_ws(value);
      spacing_line = lineno;
    } else if (key == "ElementType") {
      if (value == "MET_UCHAR") {
        h.element_type = ElementType::UInt8;
      } else if (value == "MET_DOUBLE") {
        h.element_type = ElementType::Float64;
      } else {
        header_error(header_path, lineno, key, "unknown element type '" + value + "'");
      }
      have_type = true;
    } else if (key == "BinaryDataByteOrderMSB" || key == "ElementByteOrderMSB") {
      if (value != "True" && value != "False") header_error(header_path, lineno, key, "expected True or False");
      h.byte_order_msb = value == "True";
    } else if (key == "CompressedData") {
      if (value != "False") header_error(header_path, lineno, key, "compressed payloads are not supported");
    } else if (key == "ContentKind") {
      const auto k = parse_kind(value);
      if (!k) header_error(header_path, lineno, key, "unknown content kind '" + value + "'");
      h.kind = *k;
      have_kind = true;
    } else if (key == "ChannelCount") {
      if (!parse_number(value, h.channels) || h.channels == 0) {
        header_error(header_path, lineno, key, "expected a positive integer, got '" + value + "'");
      }
    } else if (key == "ClassTable") {
      std::vector<ClassEntry> entries;
      std::istringstream is(value);
      for (std::string item; std::getline(is, item, ';');) {
        const auto colon = item.find(':');
        unsigned id = 0;
        if (colon == std::string::npos || !parse_number(trim(item.substr(0, colon)), id) || id > 255) {
          header_error(header_path, lineno, key, "expected 'id:name' entries, got '" + item + "'");
        }
        entries.push_back({static_cast<std::uint8_t>(id), trim(item.substr(colon + 1))});
      }
      try {
        h.classes = ClassTable(std::move(entries));
      } catch (const Error& e) {
        header_error(header_path, lineno, key, e.what());
      }
    } else if (key == "ElementDataFile") {
      if (value.empty() || value == "LOCAL" || value == "LIST") {
        header_error(header_path, lineno, key, "only a detached raw file name is supported");
      }
      h.data_file = header_path.parent_path() / value;
      have_file = true;
    }
    // Other MetaImage keys (ObjectType, Offset, TransformMatrix, ...) are ignored.
  }
  if (!have_ndims) header_error(header_path, lineno, "NDims", "missing");
  if (!have_dims) header_error(header_path, lineno, "DimSize", "missing");
  if (!have_type) header_error(header_path, lineno, "ElementType", "missing");
  if (!have_file) header_error(header_path, lineno, "ElementDataFile", "missing");

  if (dim_tokens.size() != static_cast<std::size_t>(h.ndims)) {
    header_error(header_path, dims_line, "DimSize", "expected " + std::to_string(h.ndims) + " sizes");
  }
  for (const auto& tok : dim_tokens) {
    std::size_t d = 0;
    if (!parse_number(tok, d) || d == 0) header_error(header_path, dims_line, "DimSize", "invalid size '" + tok + "'");
    h.dim_sizes.push_back(d);
  }
  if (spacing_tokens.empty()) {
    h.spacing.assign(static_cast<std::size_t>(h.ndims), 1.0);
  } else {
    if (spacing_tokens.size() != static_cast<std::size_t>(h.ndims)) {
      header_error(header_path, spacing_line, "ElementSpacing", "expected " + std::to_string(h.ndims) + " values");
    }
    for (const auto& tok : spacing_tokens) {
      double s = 0;
      if (!parse_number(tok, s) || !std::isfinite(s) || s <= 0) {
        header_error(header_path, spacing_line, "ElementSpacing", "invalid spacing '" + tok + "'");
      }
      h.spacing.push_back(s);
    }
  }
  if (!have_kind) h.kind = h.element_type == ElementType::UInt8 ? ContentKind::Labels : ContentKind::Probabilities;

  const bool wants_u8 = h.kind == ContentKind::Labels;
  if (wants_u8 != (h.element_type == ElementType::UInt8)) {
    header_error(header_path, lineno, "ElementType", "does not match ContentKind " + to_string(h.kind));
  }
  const bool volumetric = h.kind == ContentKind::Labels || h.kind == ContentKind::Probabilities ||
                          h.kind == ContentKind::Variance;
  if (volumetric && h.ndims != 3) header_error(header_path, lineno, "NDims", "volumes must be 3D");
  if ((h.kind == ContentKind::Labels || h.kind == ContentKind::Heatmap) && h.channels != 1) {
    header_error(header_path, lineno, "ChannelCount", "must be 1 for " + to_string(h.kind));
  }
  std::size_t bytes = h.element_size();
  std::vector<std::size_t> factors = h.dim_sizes;
  factors.push_back(h.channels);
  for (auto d : factors) {
    if (__builtin_mul_overflow(bytes, d, &bytes) || bytes > (std::size_t{1} << 46)) {
      header_error(header_path, dims_line, "DimSize", "payload size overflows");
    }
  }
  return h;
}

Volume read_volume(const fs::path& header_path) {
  const VolumeHeader h = read_header(header_path);
  const auto bytes = read_payload(h);
  const Dims dims = dims_of(h);
  const VoxelSpacing spacing = spacing_of(h);
  try {
    switch (h.kind) {
      case ContentKind::Labels: {
        std::vector<std::uint8_t> labels(bytes.size());
        std::memcpy(labels.data(), bytes.data(), bytes.size());
        return LabelVolume(dims, spacing, std::move(labels), h.classes.value_or(ClassTable::lesion_defaults()));
      }
      case ContentKind::Probabilities:
      case ContentKind::Variance:
        return ProbVolume(dims, spacing, h.channels, decode_doubles(bytes, h.byte_order_msb));
      case ContentKind::Tensor:
        return posthoc::FeatureTensor(h.channels, dims, h.ndims, decode_doubles(bytes, h.byte_order_msb), spacing);
      case ContentKind::Heatmap:
        return posthoc::Heatmap(dims, h.ndims, decode_doubles(bytes, h.byte_order_msb), spacing);
    }
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(header_path.string() + ": invalid content: " + e.what());
  }
  throw FormatError("unreachable content kind");
}

namespace {
template <class T>
T read_as(const fs::path& p, const char* what) {
  Volume v = read_volume(p);
  if (auto* t = std::get_if<T>(&v)) return std::move(*t);
  throw FormatError(p.string() + ": expected " + what);
}
}  // namespace

LabelVolume read_labels(const fs::path& p) { return read_as<LabelVolume>(p, "a label volume"); }
ProbVolume read_probabilities(const fs::path& p) { return read_as<ProbVolume>(p, "a probability volume"); }
posthoc::FeatureTensor read_tensor(const fs::path& p) { return read_as<posthoc::FeatureTensor>(p, "a feature tensor"); }
posthoc::Heatmap read_heatmap(const fs::path& p) { return read_as<posthoc::Heatmap>(p, "a heatmap"); }

void write_volume(const LabelVolume& v, const fs::path& header_path) {
  const auto& d = v.dims();
  std::ofstream out;
  write_header_and_open(header_path,
                        {3, {d.nx, d.ny, d.nz}, {v.spacing().dx(), v.spacing().dy(), v.spacing().dz()},
                         ElementType::UInt8, ContentKind::Labels, 1, &v.classes()},
                        out);
  const auto labels = v.labels();
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  finish(out, header_path);
}

void write_volume(const ProbVolume& v, const fs::path& header_path, ContentKind kind) {
  if (kind != ContentKind::Probabilities && kind != ContentKind::Variance) {
    throw Error("probability grids are written as probabilities or variance");
  }
  const auto& d = v.dims();
  std::ofstream out;
  write_header_and_open(header_path,
                        {3, {d.nx, d.ny, d.nz}, {v.spacing().dx(), v.spacing().dy(), v.spacing().dz()},
                         ElementType::Float64, kind, v.num_classes(), nullptr},
                        out);
  write_doubles(out, v.values());
  finish(out, header_path);
}

void write_volume(const posthoc::FeatureTensor& t, const fs::path& header_path) {
  const auto& d = t.dims();
  const auto& s = t.spacing();
  HeaderFields f{t.spatial_rank(), {d.nx, d.ny, d.nz}, {s.dx(), s.dy(), s.dz()}, ElementType::Float64,
                 ContentKind::Tensor, t.channels(), nullptr};
  std::ofstream out;
  write_header_and_open(header_path, f, out);
  write_doubles(out, t.values());
  finish(out, header_path);
}

void write_volume(const posthoc::Heatmap& h, const fs::path& header_path) {
  const auto& d = h.dims();
  const auto& s = h.spacing();
  HeaderFields f{h.spatial_rank(), {d.nx, d.ny, d.nz}, {s.dx(), s.dy(), s.dz()}, ElementType::Float64,
                 ContentKind::Heatmap, 1, nullptr};
  std::ofstream out;
  write_header_and_open(header_path, f, out);
  write_doubles(out, h.values());
  finish(out, header_path);
}

std::map<std::string, double> PftTable::by_case() const {
  std::map<std::string, double> out;
  for (const auto& r : rows) out[r.case_id] = r.fev1_percent;
  return out;
}

PftTable read_pft_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  auto fail = [&](int line, const std::string& what) -> void {
    throw FormatError(path.string() + ": line " + std::to_string(line) + ": " + what);
  };
  std::string line;
  int lineno = 0;
  int id_col = -1, fev_col = -1;
  std::size_t ncols = 0;
  PftTable table;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::istringstream is(line);
    for (std::string cell; std::getline(is, cell, ',');) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (id_col < 0) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] == "case_id") id_col = static_cast<int>(i);
        if (cells[i] == "fev1_percent") fev_col = static_cast<int>(i);
      }
      if (id_col < 0 || fev_col < 0) fail(lineno, "header must contain columns case_id and fev1_percent");
      ncols = cells.size();
      continue;
    }
    if (cells.size() != ncols) fail(lineno, "expected " + std::to_string(ncols) + " columns");
    const std::string& id = cells[static_cast<std::size_t>(id_col)];
    const std::string& fev = cells[static_cast<std::size_t>(fev_col)];
    if (id.empty()) fail(lineno, "empty case_id");
    double value = 0;
    if (!parse_number(fev, value) || !std::isfinite(value)) fail(lineno, "fev1_percent '" + fev + "' is not a number");
    if (!(value > 0.0 && value <= 200.0)) fail(lineno, "fev1_percent " + fev + " outside (0, 200]");
    if (!seen.insert(id).second) fail(lineno, "duplicate case_id '" + id + "'");
    table.rows.push_back({id, value});
  }
  if (id_col < 0) throw FormatError(path.string() + ": missing header row case_id,fev1_percent");
  return table;
}

}  // namespace airwayseg::io
