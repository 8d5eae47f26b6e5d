#include "qrec/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace qrec {

namespace {

[[noreturn]] void parse_fail(const std::string& where, std::size_t line,
                             const std::string& what) {
  throw std::runtime_error(where + ":" + std::to_string(line) + ": " + what);
}

std::string trim(const std::string& s) {
  std::size_t begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) return {};
  std::size_t end = s.find_last_not_of(" \t");
  return s.substr(begin, end - begin + 1);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct FieldDef {
  std::string name;
  std::function<void(RunConfig&, const std::string&, const std::string&, std::size_t)> set;
  std::function<std::string(const RunConfig&)> get;
};

FieldDef int_field(std::string name, std::function<int&(RunConfig&)> acc) {
  return {std::move(name),
          [acc](RunConfig& c, const std::string& v, const std::string& where,
                std::size_t line) {
            int parsed = 0;
            auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), parsed);
            if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
              parse_fail(where, line, "expected an integer, got '" + v + "'");
            }
            acc(c) = parsed;
          },
          [acc](const RunConfig& c) {
            return std::to_string(acc(const_cast<RunConfig&>(c)));
          }};
}

FieldDef u64_field(std::string name, std::function<std::uint64_t&(RunConfig&)> acc) {
  return {std::move(name),
          [acc](RunConfig& c, const std::string& v, const std::string& where,
                std::size_t line) {
            std::uint64_t parsed = 0;
            auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), parsed);
            if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
              parse_fail(where, line, "expected an unsigned integer, got '" + v + "'");
            }
            acc(c) = parsed;
          },
          [acc](const RunConfig& c) {
            return std::to_string(acc(const_cast<RunConfig&>(c)));
          }};
}

FieldDef double_field(std::string name, std::function<double&(RunConfig&)> acc) {
  return {std::move(name),
          [acc](RunConfig& c, const std::string& v, const std::string& where,
                std::size_t line) {
            if (v.empty()) parse_fail(where, line, "expected a number, got ''");
            char* end = nullptr;
            const double parsed = std::strtod(v.c_str(), &end);
            if (end != v.c_str() + v.size()) {
              parse_fail(where, line, "expected a number, got '" + v + "'");
            }
            acc(c) = parsed;
          },
          [acc](const RunConfig& c) {
            return format_double(acc(const_cast<RunConfig&>(c)));
          }};
}

FieldDef bool_field(std::string name, std::function<bool&(RunConfig&)> acc) {
  return {std::move(name),
          [acc](RunConfig& c, const std::string& v, const std::string& where,
                std::size_t line) {
            if (v == "true" || v == "1") {
              acc(c) = true;
            } else if (v == "false" || v == "0") {
              acc(c) = false;
            } else {
              parse_fail(where, line, "expected true/false, got '" + v + "'");
            }
          },
          [acc](const RunConfig& c) {
            return acc(const_cast<RunConfig&>(c)) ? "true" : "false";
          }};
}

FieldDef string_field(std::string name, std::function<std::string&(RunConfig&)> acc) {
  return {std::move(name),
          [acc](RunConfig& c, const std::string& v, const std::string&, std::size_t) {
            acc(c) = v;
          },
          [acc](const RunConfig& c) { return acc(const_cast<RunConfig&>(c)); }};
}

const std::vector<FieldDef>& fields() {
  static const std::vector<FieldDef> defs = [] {
    std::vector<FieldDef> f;
    f.push_back(string_field("data_dir", [](RunConfig& c) -> std::string& { return c.data_dir; }));
    f.push_back(int_field("synth_users", [](RunConfig& c) -> int& { return c.synth.users; }));
    f.push_back(int_field("synth_items", [](RunConfig& c) -> int& { return c.synth.items; }));
    f.push_back(int_field("synth_queries", [](RunConfig& c) -> int& { return c.synth.queries; }));
    f.push_back(int_field("synth_categories", [](RunConfig& c) -> int& { return c.synth.categories; }));
    f.push_back(int_field("synth_rec_events", [](RunConfig& c) -> int& { return c.synth.rec_events_per_user; }));
    f.push_back(int_field("synth_sessions", [](RunConfig& c) -> int& { return c.synth.search_sessions_per_user; }));
    f.push_back(int_field("synth_impressions", [](RunConfig& c) -> int& { return c.synth.impressions_per_session; }));
    f.push_back(double_field("synth_shift", [](RunConfig& c) -> double& { return c.synth.shift; }));
    f.push_back(double_field("synth_affinity", [](RunConfig& c) -> double& { return c.synth.affinity; }));
    f.push_back(double_field("synth_noise", [](RunConfig& c) -> double& { return c.synth.noise; }));
    f.push_back(u64_field("synth_seed", [](RunConfig& c) -> std::uint64_t& { return c.synth.seed; }));
    f.push_back(int_field("dim", [](RunConfig& c) -> int& { return c.dim; }));
    f.push_back(int_field("l_max", [](RunConfig& c) -> int& { return c.l_max; }));
    f.push_back(int_field("window", [](RunConfig& c) -> int& { return c.window; }));
    f.push_back(int_field("n_pos", [](RunConfig& c) -> int& { return c.n_pos; }));
    f.push_back(int_field("n_neg", [](RunConfig& c) -> int& { return c.n_neg; }));
    f.push_back(int_field("n_ctr_pos", [](RunConfig& c) -> int& { return c.n_ctr_pos; }));
    f.push_back(int_field("n_ctr_neg", [](RunConfig& c) -> int& { return c.n_ctr_neg; }));
    f.push_back(double_field("beta_ctr", [](RunConfig& c) -> double& { return c.beta_ctr; }));
    f.push_back(double_field("lambda2", [](RunConfig& c) -> double& { return c.lambda2; }));
    f.push_back(double_field("lambda3", [](RunConfig& c) -> double& { return c.lambda3; }));
    f.push_back(int_field("diff_steps", [](RunConfig& c) -> int& { return c.diffusion.steps; }));
    f.push_back(double_field("diff_beta_min", [](RunConfig& c) -> double& { return c.diffusion.beta_min; }));
    f.push_back(double_field("diff_beta_max", [](RunConfig& c) -> double& { return c.diffusion.beta_max; }));
    f.push_back(double_field("diff_r_pos", [](RunConfig& c) -> double& { return c.diffusion.r_pos; }));
    f.push_back(double_field("diff_r_neg", [](RunConfig& c) -> double& { return c.diffusion.r_neg; }));
    f.push_back(double_field("diff_mask_rate", [](RunConfig& c) -> double& { return c.diffusion.mask_rate; }));
    f.push_back(int_field("diff_top_k", [](RunConfig& c) -> int& { return c.diffusion.top_k; }));
    f.push_back(int_field("diff_train_steps", [](RunConfig& c) -> int& { return c.diffusion.train_steps; }));
    f.push_back(int_field("diff_batch_size", [](RunConfig& c) -> int& { return c.diffusion.batch_size; }));
    f.push_back(double_field("lr", [](RunConfig& c) -> double& { return c.lr; }));
    f.push_back(double_field("adam_beta1", [](RunConfig& c) -> double& { return c.adam_beta1; }));
    f.push_back(double_field("adam_beta2", [](RunConfig& c) -> double& { return c.adam_beta2; }));
    f.push_back(double_field("adam_eps", [](RunConfig& c) -> double& { return c.adam_eps; }));
    f.push_back(int_field("batch_size", [](RunConfig& c) -> int& { return c.batch_size; }));
    f.push_back(int_field("epochs", [](RunConfig& c) -> int& { return c.epochs; }));
    f.push_back(int_field("patience", [](RunConfig& c) -> int& { return c.patience; }));
    f.push_back(u64_field("seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
    f.push_back(bool_field("use_query_feature", [](RunConfig& c) -> bool& { return c.use_query_feature; }));
    f.push_back(bool_field("use_nip", [](RunConfig& c) -> bool& { return c.use_nip; }));
    f.push_back(bool_field("use_contrastive", [](RunConfig& c) -> bool& { return c.use_contrastive; }));
    f.push_back(bool_field("use_diffusion", [](RunConfig& c) -> bool& { return c.use_diffusion; }));
    return f;
  }();
  return defs;
}

const FieldDef* find_field(const std::string& key) {
  for (const FieldDef& f : fields()) {
    if (f.name == key) return &f;
  }
  return nullptr;
}

void apply_line(RunConfig& cfg, const std::string& raw, const std::string& where,
                std::size_t line, std::set<std::string>* seen) {
  const std::size_t eq = raw.find('=');
  if (eq == std::string::npos) {
    parse_fail(where, line, "expected key=value, got '" + raw + "'");
  }
  const std::string key = trim(raw.substr(0, eq));
  const std::string value = trim(raw.substr(eq + 1));
  if (key.empty()) parse_fail(where, line, "empty key");
  const FieldDef* field = find_field(key);
  if (field == nullptr) parse_fail(where, line, "unknown key '" + key + "'");
  if (seen != nullptr && !seen->insert(key).second) {
    parse_fail(where, line, "duplicate key '" + key + "'");
  }
  field->set(cfg, value, where, line);
}

}  // namespace

void RunConfig::validate() const {
  const auto positive = [](int v, const char* name) {
    if (v < 1) {
      throw std::invalid_argument(std::string("run config: ") + name + " must be >= 1");
    }
  };
  positive(dim, "dim");
  positive(l_max, "l_max");
  positive(window, "window");
  positive(n_pos, "n_pos");
  positive(n_neg, "n_neg");
  positive(n_ctr_pos, "n_ctr_pos");
  positive(n_ctr_neg, "n_ctr_neg");
  positive(batch_size, "batch_size");
  positive(epochs, "epochs");
  positive(patience, "patience");
  if (!(beta_ctr > 0.0)) throw std::invalid_argument("run config: beta_ctr must be > 0");
  if (lambda2 < 0.0 || lambda3 < 0.0) {
    throw std::invalid_argument("run config: lambda2 and lambda3 must be >= 0");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("run config: lr must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw std::invalid_argument("run config: adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("run config: adam_eps must be > 0");
  diffusion.validate();
}

RunConfig parse_run_config(const std::string& text, const std::string& where) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    apply_line(cfg, line, where, line_no, &seen);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text, path);
}

void apply_config_override(RunConfig& cfg, const std::string& assignment) {
  apply_line(cfg, trim(assignment), "<override>", 1, nullptr);
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::string out;
  for (const FieldDef& f : fields()) {
    out += f.name;
    out += " = ";
    out += f.get(cfg);
    out += "\n";
  }
  return out;
}

}  // namespace qrec
