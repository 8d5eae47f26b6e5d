#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qrec/optim.hpp"
#include "qrec/tensor.hpp"

namespace qrec {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// IEEE 802.3 polynomial, reflected, init and final xor 0xFFFFFFFF.
std::uint32_t crc32_ieee(std::span<const unsigned char> bytes);

/// Snaps every parameter to the nearest 32-bit float. Values already on the
/// float grid are untouched, so a store that is quantized after each
/// optimizer update survives checkpoint round trips bitwise.
void quantize_parameters_f32(ParameterStore& store);

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Binary layout: magic "QREC", format version u32, tensor count u32, then
/// per tensor: name length u16 + UTF-8 name, rank u8 (always 2), dims as u64
/// little-endian, data as 32-bit little-endian floats; trailing CRC32 over
/// every preceding byte. Doubles are narrowed to float on save.
void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::string& path);

struct LoadedCheckpoint {
  std::string config_text;
  std::int64_t step = 0;
  std::vector<NamedTensor> parameters;
};

/// Writes every store parameter plus two reserved entries, "meta.config_text"
/// and "meta.step", that carry the run configuration and training step as
/// character-coded tensors. Parameter names must not start with "meta.".
void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const std::string& config_text, std::int64_t step);
LoadedCheckpoint load_checkpoint(const std::string& path);

/// Copies checkpoint parameters into an already-shaped store. Every store
/// parameter must be present with a matching shape, and every checkpoint
/// parameter must exist in the store; violations name the tensor.
void restore_parameters(ParameterStore& store, const LoadedCheckpoint& ckpt);

}  // namespace qrec
