#include "doctest.h"

#include "qrec/config.hpp"

#include <functional>
#include <stdexcept>
#include <string>

namespace {

std::string thrown_message(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "<no exception>";
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("defaults pass validation and match the pinned values") {
  qrec::RunConfig cfg;
  cfg.validate();
  CHECK(cfg.data_dir == "");
  CHECK(cfg.dim == 32);
  CHECK(cfg.l_max == 50);
  CHECK(cfg.window == 10);
  CHECK(cfg.n_pos == 2);
  CHECK(cfg.n_neg == 2);
  CHECK(cfg.n_ctr_pos == 4);
  CHECK(cfg.n_ctr_neg == 64);
  CHECK(cfg.beta_ctr == 0.1);
  CHECK(cfg.lambda2 == 0.1);
  CHECK(cfg.lambda3 == 0.1);
  CHECK(cfg.diffusion.steps == 50);
  CHECK(cfg.lr == 1e-3);
  CHECK(cfg.batch_size == 256);
  CHECK(cfg.epochs == 10);
  CHECK(cfg.patience == 3);
  CHECK(cfg.seed == 1);
  CHECK(cfg.use_query_feature);
  CHECK(cfg.use_nip);
  CHECK(cfg.use_contrastive);
  CHECK(cfg.use_diffusion);
}

TEST_CASE("serialize then parse reproduces every field exactly") {
  qrec::RunConfig cfg;
  cfg.data_dir = "/tmp/run one";
  cfg.dim = 7;
  cfg.lambda2 = 0.30000000000000004;
  cfg.lambda3 = 1.0 / 3.0;
  cfg.lr = 2.5e-4;
  cfg.adam_eps = 1e-8;
  cfg.seed = 18446744073709551615ull;
  cfg.synth.seed = 42;
  cfg.synth.shift = 0.12345678901234567;
  cfg.diffusion.beta_min = 3e-5;
  cfg.diffusion.r_neg = -0.75;
  cfg.use_diffusion = false;
  cfg.use_nip = false;

  const std::string text = qrec::serialize_run_config(cfg);
  const qrec::RunConfig back = qrec::parse_run_config(text, "<mem>");

  CHECK(back.data_dir == cfg.data_dir);
  CHECK(back.dim == cfg.dim);
  CHECK(back.lambda2 == cfg.lambda2);
  CHECK(back.lambda3 == cfg.lambda3);
  CHECK(back.lr == cfg.lr);
  CHECK(back.adam_eps == cfg.adam_eps);
  CHECK(back.seed == cfg.seed);
  CHECK(back.synth.seed == cfg.synth.seed);
  CHECK(back.synth.shift == cfg.synth.shift);
  CHECK(back.diffusion.beta_min == cfg.diffusion.beta_min);
  CHECK(back.diffusion.r_neg == cfg.diffusion.r_neg);
  CHECK(back.use_diffusion == cfg.use_diffusion);
  CHECK(back.use_nip == cfg.use_nip);

  CHECK(qrec::serialize_run_config(back) == text);
}

TEST_CASE("parser handles comments, blank lines, and spacing") {
  const std::string text =
      "# run settings\n"
      "\n"
      "dim=4\n"
      "  window =  3   # trailing note\n"
      "\tuse_nip\t=\tfalse\n"
      "data_dir = /data/with spaces\n";
  const qrec::RunConfig cfg = qrec::parse_run_config(text, "<mem>");
  CHECK(cfg.dim == 4);
  CHECK(cfg.window == 3);
  CHECK_FALSE(cfg.use_nip);
  CHECK(cfg.data_dir == "/data/with spaces");
  CHECK(cfg.l_max == 50);
}

TEST_CASE("unset keys keep their defaults") {
  const qrec::RunConfig cfg = qrec::parse_run_config("dim = 8\n", "<mem>");
  CHECK(cfg.dim == 8);
  CHECK(cfg.batch_size == 256);
  CHECK(cfg.lambda2 == 0.1);
}

TEST_CASE("value may contain an equals sign") {
  const qrec::RunConfig cfg = qrec::parse_run_config("data_dir = a=b\n", "<mem>");
  CHECK(cfg.data_dir == "a=b");
}

TEST_CASE("parse errors name the location and the offending text") {
  const auto msg = [](const std::string& text) {
    return thrown_message([&] { qrec::parse_run_config(text, "run.cfg"); });
  };
  CHECK(msg("dim = 4\nbogus_key = 1\n") == "run.cfg:2: unknown key 'bogus_key'");
  CHECK(msg("dim = 4\ndim = 5\n") == "run.cfg:2: duplicate key 'dim'");
  CHECK(msg("dim\n") == "run.cfg:1: expected key=value, got 'dim'");
  CHECK(msg(" = 4\n") == "run.cfg:1: empty key");
  CHECK(msg("dim = four\n") == "run.cfg:1: expected an integer, got 'four'");
  CHECK(msg("dim = 4x\n") == "run.cfg:1: expected an integer, got '4x'");
  CHECK(msg("dim =\n") == "run.cfg:1: expected an integer, got ''");
  CHECK(msg("lr = fast\n") == "run.cfg:1: expected a number, got 'fast'");
  CHECK(msg("seed = -1\n") == "run.cfg:1: expected an unsigned integer, got '-1'");
  CHECK(msg("use_nip = maybe\n") == "run.cfg:1: expected true/false, got 'maybe'");
}

TEST_CASE("booleans accept 1 and 0") {
  const qrec::RunConfig cfg =
      qrec::parse_run_config("use_nip = 0\nuse_contrastive = 1\n", "<mem>");
  CHECK_FALSE(cfg.use_nip);
  CHECK(cfg.use_contrastive);
}

TEST_CASE("overrides update one key and reject junk") {
  qrec::RunConfig cfg;
  qrec::apply_config_override(cfg, "lambda2=0");
  CHECK(cfg.lambda2 == 0.0);
  qrec::apply_config_override(cfg, "  diff_top_k = 7 ");
  CHECK(cfg.diffusion.top_k == 7);
  CHECK(thrown_message([&] { qrec::apply_config_override(cfg, "nope=1"); }) ==
        "<override>:1: unknown key 'nope'");
  CHECK(thrown_message([&] { qrec::apply_config_override(cfg, "dim = x"); }) ==
        "<override>:1: expected an integer, got 'x'");
}

TEST_CASE("overriding the same key twice is allowed") {
  qrec::RunConfig cfg;
  qrec::apply_config_override(cfg, "dim=8");
  qrec::apply_config_override(cfg, "dim=16");
  CHECK(cfg.dim == 16);
}

TEST_CASE("validation rejects out-of-range settings") {
  const auto msg = [](auto mutate) {
    qrec::RunConfig cfg;
    mutate(cfg);
    return thrown_message([&] { cfg.validate(); });
  };
  CHECK(msg([](qrec::RunConfig& c) { c.dim = 0; }) == "run config: dim must be >= 1");
  CHECK(msg([](qrec::RunConfig& c) { c.patience = -1; }) ==
        "run config: patience must be >= 1");
  CHECK(msg([](qrec::RunConfig& c) { c.beta_ctr = 0.0; }) ==
        "run config: beta_ctr must be > 0");
  CHECK(msg([](qrec::RunConfig& c) { c.lambda2 = -0.1; }) ==
        "run config: lambda2 and lambda3 must be >= 0");
  CHECK(msg([](qrec::RunConfig& c) { c.lr = 0.0; }) == "run config: lr must be > 0");
  CHECK(msg([](qrec::RunConfig& c) { c.adam_beta1 = 1.0; }) ==
        "run config: adam betas must be in [0, 1)");
  CHECK(msg([](qrec::RunConfig& c) { c.adam_eps = 0.0; }) ==
        "run config: adam_eps must be > 0");
  CHECK(msg([](qrec::RunConfig& c) { c.diffusion.steps = 0; }) ==
        "diffusion config: steps must be >= 1");
  CHECK(msg([](qrec::RunConfig& c) { c.lambda2 = 0.0; }) == "<no exception>");
}

TEST_CASE("parse validates the assembled config") {
  CHECK(thrown_message([] { qrec::parse_run_config("dim = 0\n", "<mem>"); }) ==
        "run config: dim must be >= 1");
}

TEST_CASE("load_run_config reports unreadable paths") {
  CHECK(thrown_message([] { qrec::load_run_config("/nonexistent/run.cfg"); }) ==
        "cannot open /nonexistent/run.cfg");
}

}
