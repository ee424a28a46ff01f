#ifndef RAILS_DATA_IO_HPP
#define RAILS_DATA_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "rails/types.hpp"

namespace rails {

// IDX image container (big-endian magic 2051). Pixels are scaled to [0,1]
// by dividing raw bytes by 255. Labels are left empty.
ExampleSet load_idx_images(const std::string& path);

// IDX label container (big-endian magic 2049).
std::vector<std::uint16_t> load_idx_labels(const std::string& path);

// Loads an image/label pair, validates the counts match and every label is
// below class_count.
ExampleSet load_idx_pair(const std::string& image_path,
                         const std::string& label_path, int class_count);

void save_idx_images(const std::string& path, const Matrix& features);
void save_idx_labels(const std::string& path,
                     const std::vector<std::uint16_t>& labels);

// RAILSEMB container: ASCII magic "RAILSEMB", u32 LE version, u32 LE rows,
// u32 LE dim, then row-major f32 LE. Non-finite entries are rejected.
EmbeddingTable load_embeddings(const std::string& path);
void save_embeddings(const std::string& path, const EmbeddingTable& table);

// Memory store file: RAILSEMB payload, then u16 LE label per entry, then a
// layer-id block (string table + per-entry layer index and creation tag),
// then a CRC32 trailer over all preceding bytes.
void save_memory_store(const std::string& path, const MemoryStore& store);
MemoryStore load_memory_store(const std::string& path);

// Splits example indices by label: list c holds exactly the indices whose
// label is c, in dataset order.
std::vector<std::vector<Eigen::Index>> partition_by_class(
    const ExampleSet& set);

// CRC32 (IEEE) of a byte range; used for file trailers and dataset stamps.
std::uint32_t crc32_bytes(const void* data, std::size_t len,
                          std::uint32_t seed = 0);

// Stamp identifying a dataset's exact contents (features as f32 plus
// labels), used to tie indices and attack files to their source data.
std::uint32_t dataset_hash(const ExampleSet& set);

}  // namespace rails

#endif  // RAILS_DATA_IO_HPP
