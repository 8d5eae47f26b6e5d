#include "qrec/checkpoint.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "qrec/nn.hpp"
#include "qrec/rng.hpp"
#include "qrec/tape.hpp"

using namespace qrec;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("qrec_checkpoint_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

template <typename Fn>
std::string thrown_message(Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  REQUIRE(out.good());
}

/// Rewrites the trailing checksum so deliberate payload edits still parse.
std::string reseal(std::string bytes) {
  REQUIRE(bytes.size() >= 4);
  bytes.resize(bytes.size() - 4);
  const std::uint32_t crc =
      crc32_ieee({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
  for (int i = 0; i < 4; ++i) {
    bytes.push_back(static_cast<char>((crc >> (8 * i)) & 0xFF));
  }
  return bytes;
}

}  // namespace

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("crc matches the canonical check vector") {
  const std::string msg = "123456789";
  const std::uint32_t crc =
      crc32_ieee({reinterpret_cast<const unsigned char*>(msg.data()), msg.size()});
  CHECK(crc == 0xCBF43926u);
  CHECK(crc32_ieee({}) == 0u);
}

TEST_CASE("quantization snaps to the float grid and is idempotent") {
  ParameterStore store;
  store.create("w", Tensor::row({0.1 + 0.2, 1.0 / 3.0, 1.0, -2.5}));
  quantize_parameters_f32(store);

  const Tensor& q = store.get("w");
  CHECK(q.at(0, 0) == static_cast<double>(static_cast<float>(0.1 + 0.2)));
  CHECK(q.at(0, 1) == static_cast<double>(static_cast<float>(1.0 / 3.0)));
  CHECK(q.at(0, 2) == 1.0);
  CHECK(q.at(0, 3) == -2.5);

  const Tensor once = store.get("w");
  quantize_parameters_f32(store);
  CHECK(store.get("w").bitwise_equal(once));
}

TEST_CASE("tensor archive round-trips float-grid values bitwise") {
  TempDir dir;
  Rng rng(4);
  const std::vector<NamedTensor> tensors = {
      {"emb.user", rng.normal_tensor(5, 3, 0.1)},
      {"head.w0", rng.normal_tensor(3, 7, 1.0)},
      {"single", Tensor::scalar(42.0)},
  };
  const std::string path = dir.file("weights.bin");
  save_tensors(path, tensors);

  const std::vector<NamedTensor> back = load_tensors(path);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].name == tensors[i].name);
    CHECK(back[i].value.bitwise_equal(tensors[i].value));
  }

  const std::string again = dir.file("weights2.bin");
  save_tensors(again, tensors);
  CHECK(read_file(path) == read_file(again));
}

TEST_CASE("narrowing on save becomes exact after one round trip") {
  TempDir dir;
  const Tensor wide = Tensor::row({0.1, 0.2, 0.3});
  const std::string first = dir.file("first.bin");
  save_tensors(first, {{"w", wide}});

  const Tensor once = load_tensors(first)[0].value;
  CHECK(!once.bitwise_equal(wide));
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(once.at(0, i) == static_cast<double>(static_cast<float>(wide.at(0, i))));
  }

  const std::string second = dir.file("second.bin");
  save_tensors(second, {{"w", once}});
  CHECK(load_tensors(second)[0].value.bitwise_equal(once));
  CHECK(read_file(first) == read_file(second));
}

TEST_CASE("full checkpoint carries parameters, config text, and step") {
  TempDir dir;
  ParameterStore store;
  Rng rng(11);
  store.create("emb.item", rng.normal_tensor(6, 4, 0.1));
  store.create("head.w0", rng.normal_tensor(4, 2, 0.5));
  store.create("head.b0", Tensor::zeros(1, 2), false);
  quantize_parameters_f32(store);

  const std::string config = "epochs = 3\nseed = 7\n# trailing note\n";
  const std::string path = dir.file("model.ckpt");
  save_checkpoint(path, store, config, 123456789);

  const LoadedCheckpoint ckpt = load_checkpoint(path);
  CHECK(ckpt.config_text == config);
  CHECK(ckpt.step == 123456789);
  REQUIRE(ckpt.parameters.size() == 3);
  for (const NamedTensor& nt : ckpt.parameters) {
    CHECK(nt.value.bitwise_equal(store.get(nt.name)));
  }

  CHECK_THROWS_AS(save_checkpoint(path, store, "", 1), std::runtime_error);

  ParameterStore reserved;
  reserved.create("meta.step", Tensor::scalar(1.0));
  const std::string err =
      thrown_message([&] { save_checkpoint(dir.file("r.ckpt"), reserved, "x", 0); });
  CHECK(err.find("reserved") != std::string::npos);
}

TEST_CASE("restore fills a shaped store and validates the tensor inventory") {
  TempDir dir;
  ParameterStore store;
  Rng rng(21);
  store.create("a", rng.normal_tensor(3, 3, 1.0));
  store.create("b", rng.normal_tensor(1, 5, 1.0));
  quantize_parameters_f32(store);
  const std::string path = dir.file("model.ckpt");
  save_checkpoint(path, store, "seed = 1\n", 17);
  const LoadedCheckpoint ckpt = load_checkpoint(path);

  ParameterStore fresh;
  fresh.create("a", Tensor::zeros(3, 3));
  fresh.create("b", Tensor::zeros(1, 5));
  restore_parameters(fresh, ckpt);
  CHECK(fresh.get("a").bitwise_equal(store.get("a")));
  CHECK(fresh.get("b").bitwise_equal(store.get("b")));

  ParameterStore mis;
  mis.create("a", Tensor::zeros(4, 3));
  mis.create("b", Tensor::zeros(1, 5));
  const std::string shape_err = thrown_message([&] { restore_parameters(mis, ckpt); });
  CHECK(shape_err.find("'a'") != std::string::npos);
  CHECK(shape_err.find("shape") != std::string::npos);

  ParameterStore extra;
  extra.create("a", Tensor::zeros(3, 3));
  extra.create("b", Tensor::zeros(1, 5));
  extra.create("c", Tensor::zeros(2, 2));
  const std::string missing_err =
      thrown_message([&] { restore_parameters(extra, ckpt); });
  CHECK(missing_err.find("'c'") != std::string::npos);

  ParameterStore narrow;
  narrow.create("a", Tensor::zeros(3, 3));
  const std::string unknown_err =
      thrown_message([&] { restore_parameters(narrow, ckpt); });
  CHECK(unknown_err.find("'b'") != std::string::npos);
}

TEST_CASE("restored parameters leave model output unchanged") {
  TempDir dir;
  ParameterStore store;
  Rng rng(8);
  const Mlp net{"net", {4, 6, 1}, true};
  net.init(store, rng);
  quantize_parameters_f32(store);

  const Tensor input = rng.normal_tensor(1, 4, 1.0);
  const auto predict = [&](const ParameterStore& s) {
    Tape t;
    ParamNodes p(t, s);
    return t.value(net.forward(t, p, t.leaf(input))).item();
  };
  const double before = predict(store);

  const std::string path = dir.file("net.ckpt");
  save_checkpoint(path, store, "seed = 8\n", 1);
  ParameterStore fresh;
  net.init(fresh, rng);
  restore_parameters(fresh, load_checkpoint(path));
  CHECK(predict(fresh) == before);
}

TEST_CASE("corruption and format drift are rejected") {
  TempDir dir;
  ParameterStore store;
  Rng rng(31);
  store.create("w", rng.normal_tensor(2, 2, 1.0));
  quantize_parameters_f32(store);
  const std::string path = dir.file("base.ckpt");
  save_checkpoint(path, store, "seed = 2\n", 5);
  const std::string good = read_file(path);

  const std::string stub = dir.file("broken.ckpt");

  write_file(stub, "QR");
  CHECK(thrown_message([&] { load_tensors(stub); }).find("truncated") !=
        std::string::npos);

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  write_file(stub, bad_magic);
  CHECK(thrown_message([&] { load_tensors(stub); }).find("magic") !=
        std::string::npos);

  std::string flipped = good;
  flipped[12] = static_cast<char>(flipped[12] ^ 0x40);
  write_file(stub, flipped);
  CHECK(thrown_message([&] { load_tensors(stub); }).find("checksum") !=
        std::string::npos);

  write_file(stub, good.substr(0, good.size() - 9));
  CHECK(thrown_message([&] { load_tensors(stub); }).find("checksum") !=
        std::string::npos);

  std::string version_bump = good;
  version_bump[4] = 2;
  write_file(stub, reseal(version_bump));
  CHECK(thrown_message([&] { load_tensors(stub); }).find("version") !=
        std::string::npos);

  std::string padded = good;
  padded.insert(padded.size() - 4, "zz");
  write_file(stub, reseal(padded));
  CHECK(thrown_message([&] { load_tensors(stub); }).find("trailing") !=
        std::string::npos);

  std::string bad_rank = good;
  const std::size_t rank_at = 4 + 4 + 4 + 2 + std::string("w").size();
  REQUIRE(bad_rank[rank_at] == 2);
  bad_rank[rank_at] = 3;
  write_file(stub, reseal(bad_rank));
  CHECK(thrown_message([&] { load_tensors(stub); }).find("rank") !=
        std::string::npos);

  CHECK_THROWS_AS(load_tensors(dir.file("absent.ckpt")), std::runtime_error);

  save_tensors(stub, {{"w", Tensor::scalar(1.0)}});
  CHECK(thrown_message([&] { load_checkpoint(stub); }).find("meta") !=
        std::string::npos);
}

TEST_SUITE_END();
