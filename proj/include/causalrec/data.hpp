#pragma once

#include <charconv>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <unordered_map>

#include "causalrec/common.hpp"
#include "causalrec/io.hpp"

namespace causalrec {

/// Raw external id <-> dense 0-based index. Dense ids follow first appearance.
class IdMap {
 public:
  std::int32_t intern(std::string_view raw) {
    auto it = index_.find(std::string(raw));
    if (it != index_.end()) return it->second;
    const auto id = static_cast<std::int32_t>(raw_.size());
    raw_.emplace_back(raw);
    index_.emplace(raw_.back(), id);
    return id;
  }

  std::optional<std::int32_t> find(std::string_view raw) const {
    auto it = index_.find(std::string(raw));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& raw(std::int32_t id) const { return raw_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const noexcept { return raw_.size(); }

 private:
  std::vector<std::string> raw_;
  std::unordered_map<std::string, std::int32_t> index_;
};

struct Interaction {
  UserId user = 0;
  ItemId item = 0;
  std::int64_t timestamp = 0;
  /// Row position in the source file; breaks timestamp ties.
  std::size_t order = 0;
};

struct InteractionLog {
  std::vector<Interaction> rows;
  IdMap users;
  IdMap items;

  std::size_t n_users() const noexcept { return users.size(); }
  std::size_t n_items() const noexcept { return items.size(); }
};

enum class Column { user, item, timestamp, ignored };

struct LoadOptions {
  char delimiter = '\t';
  /// Column roles in file order; columns beyond this list are ignored.
  std::vector<Column> columns{Column::user, Column::item, Column::timestamp};

  /// Parses a comma list such as "user,item,rating,timestamp". Any name other
  /// than user/item/timestamp marks an ignored column.
  static std::vector<Column> parse_columns(std::string_view spec) {
    std::vector<Column> cols;
    for (auto name : split_view(spec, ',')) {
      name = trim(name);
      if (name == "user") cols.push_back(Column::user);
      else if (name == "item") cols.push_back(Column::item);
      else if (name == "timestamp" || name == "time") cols.push_back(Column::timestamp);
      else cols.push_back(Column::ignored);
    }
    auto count = [&](Column c) { return std::count(cols.begin(), cols.end(), c); };
    if (count(Column::user) != 1 || count(Column::item) != 1 || count(Column::timestamp) != 1)
      throw ConfigError("column spec '" + std::string(spec) +
                        "' must name user, item and timestamp exactly once");
    return cols;
  }
};

inline InteractionLog load_interactions(const std::filesystem::path& path,
                                        const LoadOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open interaction file " + path.string());

  std::size_t needed = 0;
  for (std::size_t c = 0; c < options.columns.size(); ++c)
    if (options.columns[c] != Column::ignored) needed = c + 1;

  InteractionLog log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty()) continue;
    const auto fields = split_view(text, options.delimiter);
    if (fields.size() < needed)
      throw ParseError(path.string(), line_no,
                       "expected at least " + std::to_string(needed) + " fields, found " +
                           std::to_string(fields.size()));
    std::string_view user, item, stamp;
    for (std::size_t c = 0; c < options.columns.size() && c < fields.size(); ++c) {
      switch (options.columns[c]) {
        case Column::user: user = trim(fields[c]); break;
        case Column::item: item = trim(fields[c]); break;
        case Column::timestamp: stamp = trim(fields[c]); break;
        case Column::ignored: break;
      }
    }
    if (user.empty() || item.empty())
      throw ParseError(path.string(), line_no, "empty user or item id");
    std::int64_t ts = 0;
    auto [end, ec] = std::from_chars(stamp.data(), stamp.data() + stamp.size(), ts);
    if (ec != std::errc{} || end != stamp.data() + stamp.size())
      throw ParseError(path.string(), line_no, "timestamp '" + std::string(stamp) + "' is not an integer");
    Interaction row;
    row.user = log.users.intern(user);
    row.item = log.items.intern(item);
    row.timestamp = ts;
    row.order = log.rows.size();
    log.rows.push_back(row);
  }
  if (log.rows.empty()) throw DataError("interaction file " + path.string() + " is empty");
  return log;
}

/// Iteratively drops users with fewer than `min_user_count` interactions and
/// items with fewer than `min_item_count` until both hold. Surviving ids are
/// re-densified in first-appearance order; row order is preserved.
inline InteractionLog filter_kcore(const InteractionLog& log, std::size_t min_user_count,
                                   std::size_t min_item_count) {
  if (min_user_count < 1 || min_item_count < 1)
    throw ConfigError("k-core thresholds must be >= 1");

  std::vector<char> keep(log.rows.size(), 1);
  std::vector<std::size_t> user_count(log.n_users()), item_count(log.n_items());
  bool changed = true;
  while (changed) {
    changed = false;
    std::fill(user_count.begin(), user_count.end(), 0);
    std::fill(item_count.begin(), item_count.end(), 0);
    for (std::size_t r = 0; r < log.rows.size(); ++r) {
      if (!keep[r]) continue;
      ++user_count[static_cast<std::size_t>(log.rows[r].user)];
      ++item_count[static_cast<std::size_t>(log.rows[r].item)];
    }
    for (std::size_t r = 0; r < log.rows.size(); ++r) {
      if (!keep[r]) continue;
      const auto& row = log.rows[r];
      if (user_count[static_cast<std::size_t>(row.user)] < min_user_count ||
          item_count[static_cast<std::size_t>(row.item)] < min_item_count) {
        keep[r] = 0;
        changed = true;
      }
    }
  }

  InteractionLog out;
  for (std::size_t r = 0; r < log.rows.size(); ++r) {
    if (!keep[r]) continue;
    Interaction row = log.rows[r];
    row.user = out.users.intern(log.users.raw(row.user));
    row.item = out.items.intern(log.items.raw(row.item));
    out.rows.push_back(row);
  }
  if (out.rows.empty()) throw DataError("filters eliminate all data");
  return out;
}

/// Chronological leave-one-out split. Per retained user the last `test_len`
/// interactions form the test window (first `n` as input, last as target) and
/// everything earlier is training data.
struct SplitDataset {
  std::size_t n = 5;
  std::size_t test_len = 6;
  std::size_t n_items = 0;
  /// Log user id of each retained user; all per-user vectors below share
  /// this indexing.
  std::vector<UserId> log_user;
  std::vector<History> train;
  std::vector<History> test_input;
  std::vector<ItemId> test_target;
  std::vector<UserId> dropped_users;

  std::size_t n_users() const noexcept { return log_user.size(); }

  std::size_t train_interactions() const {
    std::size_t total = 0;
    for (const auto& seq : train) total += seq.size();
    return total;
  }

  std::size_t test_interactions() const { return n_users() * test_len; }
};

inline SplitDataset chronological_split(const InteractionLog& log, std::size_t test_len = 6,
                                        std::size_t n = 5) {
  if (n < 1) throw ConfigError("history length n must be >= 1");
  if (test_len != n + 1)
    throw ConfigError("test_len (" + std::to_string(test_len) + ") must equal n + 1 (" +
                      std::to_string(n + 1) + ")");

  std::vector<std::vector<const Interaction*>> per_user(log.n_users());
  for (const auto& row : log.rows) per_user[static_cast<std::size_t>(row.user)].push_back(&row);

  SplitDataset split;
  split.n = n;
  split.test_len = test_len;
  split.n_items = log.n_items();
  for (std::size_t u = 0; u < per_user.size(); ++u) {
    auto& rows = per_user[u];
    if (rows.size() < test_len + 1) {
      split.dropped_users.push_back(static_cast<UserId>(u));
      continue;
    }
    std::stable_sort(rows.begin(), rows.end(), [](const Interaction* a, const Interaction* b) {
      if (a->timestamp != b->timestamp) return a->timestamp < b->timestamp;
      return a->order < b->order;
    });
    const std::size_t cut = rows.size() - test_len;
    History train, input;
    for (std::size_t i = 0; i < cut; ++i) train.push_back(rows[i]->item);
    for (std::size_t i = cut; i + 1 < rows.size(); ++i) input.push_back(rows[i]->item);
    split.log_user.push_back(static_cast<UserId>(u));
    split.train.push_back(std::move(train));
    split.test_input.push_back(std::move(input));
    split.test_target.push_back(rows.back()->item);
  }
  if (split.log_user.empty())
    throw DataError("no user has at least " + std::to_string(test_len + 1) + " interactions");
  if (!split.dropped_users.empty())
    log::info("split dropped " + std::to_string(split.dropped_users.size()) +
              " users with fewer than " + std::to_string(test_len + 1) + " interactions");
  return split;
}

/// Writes manifest.json, train.tsv, test.tsv, users.tsv and items.tsv under
/// `dir`. Split files use dense ids; users.tsv/items.tsv map them back.
inline void write_split(const std::filesystem::path& dir, const SplitDataset& split,
                        const InteractionLog& log) {
  io::json manifest;
  manifest["n"] = split.n;
  manifest["test_len"] = split.test_len;
  manifest["n_users"] = split.n_users();
  manifest["n_items"] = split.n_items;
  manifest["train_interactions"] = split.train_interactions();
  manifest["test_interactions"] = split.test_interactions();
  manifest["dropped_users"] = split.dropped_users.size();
  std::vector<std::string> dropped;
  for (auto u : split.dropped_users) dropped.push_back(log.users.raw(u));
  manifest["dropped_user_ids"] = dropped;
  io::write_json(dir / "manifest.json", manifest);

  std::string train, test, users, items;
  for (std::size_t u = 0; u < split.n_users(); ++u) {
    for (auto item : split.train[u]) train += std::to_string(u) + '\t' + std::to_string(item) + '\n';
    test += std::to_string(u) + '\t' + join_items(split.test_input[u]) + '\t' +
            std::to_string(split.test_target[u]) + '\n';
    users += std::to_string(u) + '\t' + log.users.raw(split.log_user[u]) + '\n';
  }
  for (std::size_t i = 0; i < log.n_items(); ++i)
    items += std::to_string(i) + '\t' + log.items.raw(static_cast<ItemId>(i)) + '\n';
  io::write_text(dir / "train.tsv", train);
  io::write_text(dir / "test.tsv", test);
  io::write_text(dir / "users.tsv", users);
  io::write_text(dir / "items.tsv", items);
}

}  // namespace causalrec
