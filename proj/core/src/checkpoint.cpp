#include "qrec/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace qrec {

namespace {

constexpr char kMagic[4] = {'Q', 'R', 'E', 'C'};
constexpr std::string_view kConfigKey = "meta.config_text";
constexpr std::string_view kStepKey = "meta.step";

std::array<std::uint32_t, 256> crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int bit = 0; bit < 8; ++bit) {
      c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    }
    table[i] = c;
  }
  return table;
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::string& path, const std::string& bytes)
      : path_(path), bytes_(bytes) {}

  std::uint16_t u16() { return static_cast<std::uint16_t>(raw(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(raw(4)); }
  std::uint64_t u64() { return raw(8); }
  std::uint8_t u8() { return static_cast<std::uint8_t>(raw(1)); }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float f = 0.0f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }

  std::size_t pos() const { return pos_; }
  std::size_t left() const { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error(path_ + ": " + what);
  }

 private:
  std::uint64_t raw(std::size_t n) {
    need(n);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    }
    pos_ += n;
    return v;
  }

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail("truncated checkpoint");
  }

  const std::string& path_;
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

Tensor text_tensor(std::string_view text) {
  Tensor t(1, text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    t.set(0, i, static_cast<double>(static_cast<unsigned char>(text[i])));
  }
  return t;
}

std::string tensor_text(const std::string& path, const NamedTensor& nt) {
  std::string text;
  text.reserve(nt.value.size());
  for (double v : nt.value.data()) {
    if (v < 0.0 || v > 255.0 || v != static_cast<double>(static_cast<unsigned char>(v))) {
      throw std::runtime_error(path + ": tensor '" + nt.name + "' is not character data");
    }
    text.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  }
  return text;
}

}  // namespace

std::uint32_t crc32_ieee(std::span<const unsigned char> bytes) {
  static const std::array<std::uint32_t, 256> table = crc_table();
  std::uint32_t c = 0xFFFFFFFFu;
  for (unsigned char b : bytes) {
    c = table[(c ^ b) & 0xFFu] ^ (c >> 8);
  }
  return c ^ 0xFFFFFFFFu;
}

void quantize_parameters_f32(ParameterStore& store) {
  for (const std::string& name : store.names()) {
    Tensor t = store.get(name);
    for (double& v : t.mutable_data()) {
      v = static_cast<double>(static_cast<float>(v));
    }
    store.set(name, std::move(t));
  }
}

void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::string out;
  out.append(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& nt : tensors) {
    if (nt.name.size() > 0xFFFF) {
      throw std::runtime_error(path + ": tensor name too long: '" + nt.name + "'");
    }
    put_u16(out, static_cast<std::uint16_t>(nt.name.size()));
    out.append(nt.name);
    out.push_back(2);
    put_u64(out, nt.value.rows());
    put_u64(out, nt.value.cols());
    for (double v : nt.value.data()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits = 0;
      std::memcpy(&bits, &f, sizeof bits);
      put_u32(out, bits);
    }
  }
  put_u32(out, crc32_ieee({reinterpret_cast<const unsigned char*>(out.data()), out.size()}));

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error("cannot write " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw std::runtime_error("write failed: " + path);
}

std::vector<NamedTensor> load_tensors(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(file)),
                    std::istreambuf_iterator<char>());

  Reader r(path, bytes);
  if (bytes.size() < sizeof kMagic + 4 + 4 + 4) r.fail("truncated checkpoint");
  if (r.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    r.fail("bad magic, not a checkpoint file");
  }
  const std::uint32_t stored_crc = [&] {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(bytes[bytes.size() - 4 + i]))
           << (8 * i);
    }
    return v;
  }();
  const std::uint32_t actual_crc =
      crc32_ieee({reinterpret_cast<const unsigned char*>(bytes.data()),
                  bytes.size() - 4});
  if (stored_crc != actual_crc) r.fail("checksum mismatch");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    r.fail("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();

  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.str(r.u16());
    const std::uint8_t rank = r.u8();
    if (rank != 2) r.fail("tensor '" + nt.name + "' has unsupported rank");
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (rows == 0 || cols == 0 || rows > (1ull << 32) || cols > (1ull << 32) ||
        rows * cols > (1ull << 32)) {
      r.fail("tensor '" + nt.name + "' has implausible dims");
    }
    Tensor t(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    auto& data = t.mutable_data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      data[j] = static_cast<double>(r.f32());
    }
    nt.value = std::move(t);
    tensors.push_back(std::move(nt));
  }
  if (r.left() != 4) r.fail("trailing bytes after tensor data");
  return tensors;
}

void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const std::string& config_text, std::int64_t step) {
  if (config_text.empty()) {
    throw std::runtime_error("checkpoint config text must not be empty");
  }
  std::vector<NamedTensor> tensors;
  tensors.reserve(store.count() + 2);
  for (const std::string& name : store.names()) {
    if (name.rfind("meta.", 0) == 0) {
      throw std::runtime_error("parameter name '" + name + "' uses the reserved meta. prefix");
    }
    tensors.push_back({name, store.get(name)});
  }
  tensors.push_back({std::string(kConfigKey), text_tensor(config_text)});
  tensors.push_back({std::string(kStepKey), text_tensor(std::to_string(step))});
  save_tensors(path, tensors);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  LoadedCheckpoint out;
  bool saw_config = false;
  bool saw_step = false;
  for (NamedTensor& nt : load_tensors(path)) {
    if (nt.name == kConfigKey) {
      out.config_text = tensor_text(path, nt);
      saw_config = true;
    } else if (nt.name == kStepKey) {
      out.step = std::stoll(tensor_text(path, nt));
      saw_step = true;
    } else {
      out.parameters.push_back(std::move(nt));
    }
  }
  if (!saw_config || !saw_step) {
    throw std::runtime_error(path + ": checkpoint is missing its meta entries");
  }
  return out;
}

void restore_parameters(ParameterStore& store, const LoadedCheckpoint& ckpt) {
  for (const NamedTensor& nt : ckpt.parameters) {
    if (!store.has(nt.name)) {
      throw std::runtime_error("checkpoint tensor '" + nt.name +
                               "' does not exist in the model");
    }
  }
  for (const std::string& name : store.names()) {
    const NamedTensor* found = nullptr;
    for (const NamedTensor& nt : ckpt.parameters) {
      if (nt.name == name) {
        found = &nt;
        break;
      }
    }
    if (found == nullptr) {
      throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
    }
    const Tensor& current = store.get(name);
    if (!current.same_shape(found->value)) {
      throw std::runtime_error(
          "tensor '" + name + "': checkpoint shape {" +
          std::to_string(found->value.rows()) + ", " +
          std::to_string(found->value.cols()) + "} does not match model shape {" +
          std::to_string(current.rows()) + ", " + std::to_string(current.cols()) + "}");
    }
    store.set(name, found->value);
  }
}

}  // namespace qrec
