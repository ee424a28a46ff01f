#include "rails/data_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "rails/errors.hpp"

namespace rails {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;  // 2051
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;  // 2049
constexpr char kEmbMagic[8] = {'R', 'A', 'I', 'L', 'S', 'E', 'M', 'B'};
constexpr std::uint32_t kEmbVersion = 1;

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated header: " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_le_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

void append_le_u32(std::string& buf, std::uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
  buf.push_back(static_cast<char>((v >> 16) & 0xff));
  buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

void append_le_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

std::string read_all(const std::string& path) {
  std::ifstream in = open_in(path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path);
  return buf;
}

// Serializes the RAILSEMB layout into buf (header + row-major f32 LE).
void append_embeddings(std::string& buf, const Eigen::MatrixXf& rows) {
  buf.append(kEmbMagic, sizeof(kEmbMagic));
  append_le_u32(buf, kEmbVersion);
  append_le_u32(buf, static_cast<std::uint32_t>(rows.cols()));
  append_le_u32(buf, static_cast<std::uint32_t>(rows.rows()));
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
      const float v = rows(r, c);
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      append_le_u32(buf, bits);
    }
  }
}

// Parses a RAILSEMB payload starting at offset. Returns the matrix and
// advances offset past the payload.
Eigen::MatrixXf parse_embeddings(const std::string& buf, std::size_t& offset,
                                 const std::string& path) {
  if (buf.size() - offset < 20) throw IoError("truncated header: " + path);
  const unsigned char* p =
      reinterpret_cast<const unsigned char*>(buf.data()) + offset;
  if (std::memcmp(p, kEmbMagic, sizeof(kEmbMagic)) != 0) {
    throw FormatError("bad embedding magic: " + path);
  }
  const std::uint32_t version = read_le_u32(p + 8);
  if (version != kEmbVersion) {
    throw FormatError("unsupported embedding version " +
                      std::to_string(version) + ": " + path);
  }
  const std::uint32_t count = read_le_u32(p + 12);
  const std::uint32_t dim = read_le_u32(p + 16);
  const std::size_t payload = std::size_t(count) * dim * 4;
  if (buf.size() - offset - 20 < payload) {
    throw IoError("truncated embedding payload: " + path);
  }
  Eigen::MatrixXf rows(dim, count);
  const unsigned char* q = p + 20;
  for (std::uint32_t c = 0; c < count; ++c) {
    for (std::uint32_t r = 0; r < dim; ++r) {
      const std::uint32_t bits = read_le_u32(q);
      q += 4;
      float v;
      std::memcpy(&v, &bits, 4);
      if (!std::isfinite(v)) {
        throw FormatError("non-finite embedding value: " + path);
      }
      rows(r, c) = v;
    }
  }
  offset += 20 + payload;
  return rows;
}

}  // namespace

ExampleSet load_idx_images(const std::string& path) {
  std::ifstream in = open_in(path);
  const std::uint32_t magic = read_be_u32(in, path);
  if (magic != kIdxImageMagic) {
    throw FormatError("bad IDX image magic " + std::to_string(magic) + ": " +
                      path);
  }
  const std::uint32_t n = read_be_u32(in, path);
  const std::uint32_t rows = read_be_u32(in, path);
  const std::uint32_t cols = read_be_u32(in, path);
  const std::size_t dim = std::size_t(rows) * cols;
  std::vector<unsigned char> bytes(std::size_t(n) * dim);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw IoError("truncated IDX image payload: " + path);
  }
  ExampleSet set;
  set.features.resize(static_cast<Eigen::Index>(dim), n);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      set.features(static_cast<Eigen::Index>(j), i) =
          static_cast<double>(bytes[i * dim + j]) / 255.0;
    }
  }
  return set;
}

std::vector<std::uint16_t> load_idx_labels(const std::string& path) {
  std::ifstream in = open_in(path);
  const std::uint32_t magic = read_be_u32(in, path);
  if (magic != kIdxLabelMagic) {
    throw FormatError("bad IDX label magic " + std::to_string(magic) + ": " +
                      path);
  }
  const std::uint32_t n = read_be_u32(in, path);
  std::vector<unsigned char> bytes(n);
  in.read(reinterpret_cast<char*>(bytes.data()), n);
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw IoError("truncated IDX label payload: " + path);
  }
  return std::vector<std::uint16_t>(bytes.begin(), bytes.end());
}

ExampleSet load_idx_pair(const std::string& image_path,
                         const std::string& label_path, int class_count) {
  ExampleSet set = load_idx_images(image_path);
  std::vector<std::uint16_t> labels = load_idx_labels(label_path);
  if (static_cast<Eigen::Index>(labels.size()) != set.size()) {
    throw ValidationError("image/label count mismatch: " +
                          std::to_string(set.size()) + " images vs " +
                          std::to_string(labels.size()) + " labels");
  }
  for (std::uint16_t l : labels) {
    if (l >= class_count) {
      throw ValidationError("label " + std::to_string(l) +
                            " out of range for " +
                            std::to_string(class_count) + " classes");
    }
  }
  set.labels = std::move(labels);
  set.class_count = class_count;
  return set;
}

void save_idx_images(const std::string& path, const Matrix& features) {
  std::ofstream out = open_out(path);
  write_be_u32(out, kIdxImageMagic);
  write_be_u32(out, static_cast<std::uint32_t>(features.cols()));
  const auto side =
      static_cast<std::uint32_t>(std::lround(std::sqrt(double(features.rows()))));
  if (Eigen::Index(side) * side == features.rows()) {
    write_be_u32(out, side);
    write_be_u32(out, side);
  } else {
    write_be_u32(out, static_cast<std::uint32_t>(features.rows()));
    write_be_u32(out, 1);
  }
  std::vector<unsigned char> bytes(static_cast<std::size_t>(features.size()));
  std::size_t k = 0;
  for (Eigen::Index c = 0; c < features.cols(); ++c) {
    for (Eigen::Index r = 0; r < features.rows(); ++r) {
      const double v = features(r, c);
      bytes[k++] = static_cast<unsigned char>(
          std::lround(std::min(1.0, std::max(0.0, v)) * 255.0));
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

void save_idx_labels(const std::string& path,
                     const std::vector<std::uint16_t>& labels) {
  std::ofstream out = open_out(path);
  write_be_u32(out, kIdxLabelMagic);
  write_be_u32(out, static_cast<std::uint32_t>(labels.size()));
  for (std::uint16_t l : labels) {
    out.put(static_cast<char>(l & 0xff));
  }
  if (!out) throw IoError("write failed: " + path);
}

EmbeddingTable load_embeddings(const std::string& path) {
  const std::string buf = read_all(path);
  std::size_t offset = 0;
  EmbeddingTable table;
  table.rows = parse_embeddings(buf, offset, path);
  if (offset != buf.size()) {
    throw FormatError("trailing bytes after embedding payload: " + path);
  }
  return table;
}

void save_embeddings(const std::string& path, const EmbeddingTable& table) {
  std::string buf;
  append_embeddings(buf, table.rows);
  std::ofstream out = open_out(path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path);
}

void save_memory_store(const std::string& path, const MemoryStore& store) {
  const auto n = static_cast<std::size_t>(store.size());
  if (store.labels.size() != n || store.layer_index.size() != n ||
      store.creation_tags.size() != n) {
    throw ValidationError("memory store: per-entry arrays out of sync");
  }
  for (Eigen::Index c = 0; c < store.features.cols(); ++c) {
    for (Eigen::Index r = 0; r < store.features.rows(); ++r) {
      const float v = store.features(r, c);
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw ValidationError("memory store entry outside [0,1]");
      }
    }
  }
  std::string buf;
  append_embeddings(buf, store.features);
  for (std::uint16_t l : store.labels) append_le_u16(buf, l);
  append_le_u16(buf, static_cast<std::uint16_t>(store.layer_names.size()));
  for (const std::string& name : store.layer_names) {
    append_le_u16(buf, static_cast<std::uint16_t>(name.size()));
    buf.append(name);
  }
  for (std::size_t i = 0; i < n; ++i) {
    append_le_u16(buf, store.layer_index[i]);
    append_le_u32(buf, store.creation_tags[i]);
  }
  append_le_u32(buf, crc32_bytes(buf.data(), buf.size()));
  std::ofstream out = open_out(path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path);
}

MemoryStore load_memory_store(const std::string& path) {
  const std::string buf = read_all(path);
  if (buf.size() < 4) throw IoError("truncated memory store: " + path);
  const std::size_t body = buf.size() - 4;
  const std::uint32_t stored = read_le_u32(
      reinterpret_cast<const unsigned char*>(buf.data()) + body);
  if (crc32_bytes(buf.data(), body) != stored) {
    throw FormatError("memory store checksum mismatch: " + path);
  }
  std::size_t offset = 0;
  MemoryStore store;
  store.features = parse_embeddings(buf, offset, path);
  const auto n = static_cast<std::size_t>(store.features.cols());
  auto need = [&](std::size_t bytes) {
    if (body - offset < bytes) {
      throw IoError("truncated memory store: " + path);
    }
  };
  const unsigned char* base =
      reinterpret_cast<const unsigned char*>(buf.data());
  need(2 * n);
  store.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    store.labels[i] = static_cast<std::uint16_t>(
        base[offset] | (base[offset + 1] << 8));
    offset += 2;
  }
  need(2);
  const std::uint16_t name_count = static_cast<std::uint16_t>(
      base[offset] | (base[offset + 1] << 8));
  offset += 2;
  store.layer_names.resize(name_count);
  for (std::uint16_t i = 0; i < name_count; ++i) {
    need(2);
    const std::uint16_t len = static_cast<std::uint16_t>(
        base[offset] | (base[offset + 1] << 8));
    offset += 2;
    need(len);
    store.layer_names[i].assign(buf, offset, len);
    offset += len;
  }
  store.layer_index.resize(n);
  store.creation_tags.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    need(6);
    store.layer_index[i] = static_cast<std::uint16_t>(
        base[offset] | (base[offset + 1] << 8));
    if (store.layer_index[i] >= name_count) {
      throw FormatError("memory store layer index out of range: " + path);
    }
    store.creation_tags[i] = read_le_u32(base + offset + 2);
    offset += 6;
  }
  if (offset != body) {
    throw FormatError("trailing bytes in memory store: " + path);
  }
  return store;
}

std::vector<std::vector<Eigen::Index>> partition_by_class(
    const ExampleSet& set) {
  if (!set.has_labels()) {
    throw ValidationError("partition_by_class: labels absent");
  }
  std::vector<std::vector<Eigen::Index>> parts(
      static_cast<std::size_t>(set.class_count));
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    parts[set.labels[static_cast<std::size_t>(i)]].push_back(i);
  }
  return parts;
}

std::uint32_t crc32_bytes(const void* data, std::size_t len,
                          std::uint32_t seed) {
  return static_cast<std::uint32_t>(
      ::crc32(seed, static_cast<const Bytef*>(data),
              static_cast<uInt>(len)));
}

std::uint32_t dataset_hash(const ExampleSet& set) {
  std::uint32_t crc = 0;
  for (Eigen::Index c = 0; c < set.features.cols(); ++c) {
    for (Eigen::Index r = 0; r < set.features.rows(); ++r) {
      const float v = static_cast<float>(set.features(r, c));
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      unsigned char b[4] = {static_cast<unsigned char>(bits & 0xff),
                            static_cast<unsigned char>((bits >> 8) & 0xff),
                            static_cast<unsigned char>((bits >> 16) & 0xff),
                            static_cast<unsigned char>((bits >> 24) & 0xff)};
      crc = crc32_bytes(b, 4, crc);
    }
  }
  for (std::uint16_t l : set.labels) {
    unsigned char b[2] = {static_cast<unsigned char>(l & 0xff),
                          static_cast<unsigned char>((l >> 8) & 0xff)};
    crc = crc32_bytes(b, 2, crc);
  }
  return crc;
}

}  // namespace rails
