#include "qrec/data.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace qrec {

namespace {

[[noreturn]] void parse_fail(const std::string& path, std::size_t line,
                             const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
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

std::int64_t parse_int(const std::string& path, std::size_t line,
                       const std::string& field, const std::string& text) {
  std::int64_t v = 0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    parse_fail(path, line, "field '" + field + "' is not an integer: '" + text + "'");
  }
  return v;
}

int parse_id(const std::string& path, std::size_t line, const std::string& field,
             const std::string& text) {
  const std::int64_t v = parse_int(path, line, field, text);
  if (v < 0) parse_fail(path, line, "field '" + field + "' must be non-negative");
  if (v > std::numeric_limits<int>::max()) {
    parse_fail(path, line, "field '" + field + "' is out of range");
  }
  return static_cast<int>(v);
}

int parse_click(const std::string& path, std::size_t line, const std::string& text) {
  const std::int64_t v = parse_int(path, line, "click", text);
  if (v != 0 && v != 1) parse_fail(path, line, "click must be 0 or 1");
  return static_cast<int>(v);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.empty()) throw std::runtime_error(path + ": empty file");
  return lines;
}

void expect_header(const std::string& path, const std::vector<std::string>& cols,
                   const std::vector<std::string>& expected) {
  if (cols.size() != expected.size() ||
      !std::equal(cols.begin(), cols.end(), expected.begin())) {
    std::string want;
    for (const auto& c : expected) want += (want.empty() ? "" : "\t") + c;
    parse_fail(path, 1, "header must be exactly '" + want + "'");
  }
}

}  // namespace

int Dataset::n_categories() const {
  if (item_features.cardinality.empty()) {
    throw std::logic_error("item features carry no category column");
  }
  return item_features.cardinality[0];
}

int Dataset::item_category(int item) const {
  return item_features.rows.at(item).at(0);
}

std::vector<RecInteraction> load_rec_log(const std::string& path) {
  const auto lines = read_lines(path);
  expect_header(path, split_tabs(lines[0]),
                {"user_id", "item_id", "timestamp", "click"});
  std::vector<RecInteraction> out;
  out.reserve(lines.size() - 1);
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto cols = split_tabs(lines[n]);
    if (cols.size() != 4) {
      parse_fail(path, n + 1, "expected 4 columns, got " + std::to_string(cols.size()));
    }
    RecInteraction r;
    r.user = parse_id(path, n + 1, "user_id", cols[0]);
    r.item = parse_id(path, n + 1, "item_id", cols[1]);
    r.time = parse_int(path, n + 1, "timestamp", cols[2]);
    r.click = parse_click(path, n + 1, cols[3]);
    out.push_back(r);
  }
  return out;
}

std::vector<SearchInteraction> load_search_log(const std::string& path) {
  const auto lines = read_lines(path);
  expect_header(path, split_tabs(lines[0]),
                {"query_id", "user_id", "item_id", "timestamp", "click"});
  std::vector<SearchInteraction> out;
  out.reserve(lines.size() - 1);
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto cols = split_tabs(lines[n]);
    if (cols.size() != 5) {
      parse_fail(path, n + 1, "expected 5 columns, got " + std::to_string(cols.size()));
    }
    SearchInteraction s;
    s.query = parse_id(path, n + 1, "query_id", cols[0]);
    s.user = parse_id(path, n + 1, "user_id", cols[1]);
    s.item = parse_id(path, n + 1, "item_id", cols[2]);
    s.time = parse_int(path, n + 1, "timestamp", cols[3]);
    s.click = parse_click(path, n + 1, cols[4]);
    out.push_back(s);
  }
  return out;
}

FeatureTable load_features(const std::string& path, const std::string& kind) {
  const auto lines = read_lines(path);
  const auto header = split_tabs(lines[0]);
  const std::string id_col = kind + "_id";
  std::size_t lead = 1;
  if (header.empty() || header[0] != id_col) {
    parse_fail(path, 1, "first column must be '" + id_col + "'");
  }
  if (kind == "item") {
    if (header.size() < 2 || header[1] != "category") {
      parse_fail(path, 1, "second column must be 'category'");
    }
    lead = 2;
  }

  FeatureTable table;
  if (kind == "item") table.field_names.push_back("category");
  for (std::size_t j = lead; j < header.size(); ++j) {
    table.field_names.push_back(header[j]);
  }

  std::map<int, std::vector<int>> by_id;
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto cols = split_tabs(lines[n]);
    if (cols.size() != header.size()) {
      parse_fail(path, n + 1,
                 "expected " + std::to_string(header.size()) + " columns, got " +
                     std::to_string(cols.size()));
    }
    const int id = parse_id(path, n + 1, id_col, cols[0]);
    if (by_id.count(id)) {
      parse_fail(path, n + 1, "duplicate " + id_col + " " + std::to_string(id));
    }
    std::vector<int> row;
    for (std::size_t j = 1; j < cols.size(); ++j) {
      row.push_back(parse_id(path, n + 1, header[j], cols[j]));
    }
    by_id.emplace(id, std::move(row));
  }
  if (by_id.empty()) throw std::runtime_error(path + ": no feature rows");

  const int max_id = by_id.rbegin()->first;
  for (int id = 0; id <= max_id; ++id) {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw std::runtime_error(path + ": missing " + id_col + " " + std::to_string(id) +
                               " (ids must be dense)");
    }
    table.rows.push_back(std::move(it->second));
  }
  table.cardinality.assign(table.field_names.size(), 0);
  for (const auto& row : table.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      table.cardinality[j] = std::max(table.cardinality[j], row[j] + 1);
    }
  }
  return table;
}

Dataset load_dataset(const std::string& rec_path, const std::string& search_path,
                     const std::string& users_path, const std::string& items_path) {
  Dataset ds;
  ds.rec = load_rec_log(rec_path);
  ds.search = load_search_log(search_path);
  ds.user_features = load_features(users_path, "user");
  ds.item_features = load_features(items_path, "item");
  ds.n_users = static_cast<int>(ds.user_features.rows.size());
  ds.n_items = static_cast<int>(ds.item_features.rows.size());

  int max_query = -1;
  for (const auto& s : ds.search) max_query = std::max(max_query, s.query);
  ds.n_queries = max_query + 1;

  auto check_user = [&](int u, const char* where) {
    if (u >= ds.n_users) {
      throw std::runtime_error(std::string(where) + " references unknown user_id " +
                               std::to_string(u));
    }
  };
  auto check_item = [&](int i, const char* where) {
    if (i >= ds.n_items) {
      throw std::runtime_error(std::string(where) + " references unknown item_id " +
                               std::to_string(i));
    }
  };
  for (const auto& r : ds.rec) {
    check_user(r.user, "rec log");
    check_item(r.item, "rec log");
  }
  for (const auto& s : ds.search) {
    check_user(s.user, "search log");
    check_item(s.item, "search log");
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  auto open = [&](const std::string& name) {
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (fs::path(dir) / name).string());
    return out;
  };

  {
    auto out = open("rec_log.tsv");
    out << "user_id\titem_id\ttimestamp\tclick\n";
    for (const auto& r : ds.rec) {
      out << r.user << '\t' << r.item << '\t' << r.time << '\t' << r.click << '\n';
    }
  }
  {
    auto out = open("search_log.tsv");
    out << "query_id\tuser_id\titem_id\ttimestamp\tclick\n";
    for (const auto& s : ds.search) {
      out << s.query << '\t' << s.user << '\t' << s.item << '\t' << s.time << '\t'
          << s.click << '\n';
    }
  }
  {
    auto out = open("user_features.tsv");
    out << "user_id";
    for (const auto& f : ds.user_features.field_names) out << '\t' << f;
    out << '\n';
    for (std::size_t u = 0; u < ds.user_features.rows.size(); ++u) {
      out << u;
      for (int v : ds.user_features.rows[u]) out << '\t' << v;
      out << '\n';
    }
  }
  {
    auto out = open("item_features.tsv");
    out << "item_id";
    for (const auto& f : ds.item_features.field_names) out << '\t' << f;
    out << '\n';
    for (std::size_t i = 0; i < ds.item_features.rows.size(); ++i) {
      out << i;
      for (int v : ds.item_features.rows[i]) out << '\t' << v;
      out << '\n';
    }
  }
  if (!ds.query_clusters.empty()) {
    auto out = open("query_clusters.tsv");
    out << "query_id\titem_id\n";
    for (std::size_t q = 0; q < ds.query_clusters.size(); ++q) {
      for (int i : ds.query_clusters[q]) out << q << '\t' << i << '\n';
    }
  }
}

SplitAssignment leave_one_out_split(const Dataset& ds) {
  SplitAssignment out;
  out.tag.assign(ds.rec.size(), Split::kTrain);

  std::vector<std::vector<int>> per_user(ds.n_users);
  for (std::size_t k = 0; k < ds.rec.size(); ++k) {
    per_user[ds.rec[k].user].push_back(static_cast<int>(k));
  }
  for (auto& order : per_user) {
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return ds.rec[a].time < ds.rec[b].time;
    });
    if (order.size() >= 3) {
      out.tag[order[order.size() - 1]] = Split::kTest;
      out.tag[order[order.size() - 2]] = Split::kVal;
    }
  }
  for (std::size_t k = 0; k < ds.rec.size(); ++k) {
    switch (out.tag[k]) {
      case Split::kTrain: out.train.push_back(static_cast<int>(k)); break;
      case Split::kVal: out.val.push_back(static_cast<int>(k)); break;
      case Split::kTest: out.test.push_back(static_cast<int>(k)); break;
    }
  }
  return out;
}

BehaviorIndex::BehaviorIndex(const Dataset& ds, int l_max, int window_w)
    : ds_(&ds), l_max_(l_max), window_w_(window_w) {
  if (l_max <= 0) throw std::invalid_argument("l_max must be positive");
  if (window_w < 0) throw std::invalid_argument("window must be non-negative");

  users_.resize(ds.n_users);
  pos_in_user_.assign(ds.rec.size(), -1);

  for (std::size_t k = 0; k < ds.rec.size(); ++k) {
    users_[ds.rec[k].user].rec_order.push_back(static_cast<int>(k));
  }
  for (auto& log : users_) {
    std::stable_sort(log.rec_order.begin(), log.rec_order.end(), [&](int a, int b) {
      return ds.rec[a].time < ds.rec[b].time;
    });
    log.rec_times.reserve(log.rec_order.size());
    for (std::size_t p = 0; p < log.rec_order.size(); ++p) {
      const int idx = log.rec_order[p];
      pos_in_user_[idx] = static_cast<int>(p);
      log.rec_times.push_back(ds.rec[idx].time);
      if (ds.rec[idx].click == 1) {
        log.clicked.emplace_back(ds.rec[idx].time, ds.rec[idx].item);
      }
    }
  }

  // Search rows arrive one per impression; collapse rows sharing
  // (user, time, query) into a single query event, keeping first occurrence.
  std::vector<std::set<std::pair<std::int64_t, int>>> seen(ds.n_users);
  for (const auto& s : ds.search) {
    if (seen[s.user].emplace(s.time, s.query).second) {
      users_[s.user].queries.emplace_back(s.time, s.query);
    }
  }
  for (auto& log : users_) {
    std::stable_sort(log.queries.begin(), log.queries.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
  }
}

BehaviorIndex::Context BehaviorIndex::context(int rec_index) const {
  if (rec_index < 0 || static_cast<std::size_t>(rec_index) >= ds_->rec.size()) {
    throw std::out_of_range("rec interaction index out of range");
  }
  const RecInteraction& anchor = ds_->rec[rec_index];
  const UserLog& log = users_[anchor.user];
  Context ctx;

  // Clicked-item history: strictly earlier timestamps, most recent l_max.
  const auto click_end = std::lower_bound(
      log.clicked.begin(), log.clicked.end(), anchor.time,
      [](const auto& e, std::int64_t t) { return e.first < t; });
  const auto click_begin =
      click_end - std::min<std::ptrdiff_t>(click_end - log.clicked.begin(), l_max_);
  for (auto it = click_begin; it != click_end; ++it) ctx.hist_items.push_back(it->second);

  const auto query_end = std::lower_bound(
      log.queries.begin(), log.queries.end(), anchor.time,
      [](const auto& e, std::int64_t t) { return e.first < t; });
  const auto query_begin =
      query_end - std::min<std::ptrdiff_t>(query_end - log.queries.begin(), l_max_);
  for (auto it = query_begin; it != query_end; ++it) ctx.hist_queries.push_back(it->second);
  if (query_end != log.queries.begin()) ctx.last_query = std::prev(query_end)->second;

  // Forward window: the next W interactions after the anchor's own position.
  const int p = pos_in_user_[rec_index];
  const std::size_t stop =
      std::min(log.rec_order.size(), static_cast<std::size_t>(p) + 1 + window_w_);
  for (std::size_t k = p + 1; k < stop; ++k) {
    const RecInteraction& r = ds_->rec[log.rec_order[k]];
    (r.click == 1 ? ctx.future_pos : ctx.future_neg).push_back(r.item);
  }
  return ctx;
}

QueryItemSets build_query_item_sets(const Dataset& ds) {
  QueryItemSets sets;
  sets.positives.resize(ds.n_queries);
  sets.negatives.resize(ds.n_queries);

  std::vector<std::set<int>> pos(ds.n_queries), seen(ds.n_queries);
  for (const auto& s : ds.search) {
    seen[s.query].insert(s.item);
    if (s.click == 1) pos[s.query].insert(s.item);
  }
  for (int q = 0; q < ds.n_queries; ++q) {
    sets.positives[q].assign(pos[q].begin(), pos[q].end());
    for (int item : seen[q]) {
      if (!pos[q].count(item)) sets.negatives[q].push_back(item);
    }
  }
  return sets;
}

}  // namespace qrec
