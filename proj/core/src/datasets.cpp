#include "intentguard/datasets.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "intentguard/errors.hpp"
#include "intentguard/jsonl.hpp"
#include "intentguard/text_util.hpp"

namespace intentguard {

std::uint64_t detail_shuffle_next(std::uint64_t state) { return splitmix64(state); }

void validate(const HarmfulItem& item) {
  if (item.id.empty()) throw ValidationError("harmful item missing id");
  if (item.instruction.empty()) throw ValidationError("harmful item '" + item.id + "' has empty instruction");
  if (item.prefill_suffix && item.prefill_suffix->empty()) {
    throw ValidationError("harmful item '" + item.id + "' has empty prefill_suffix");
  }
}

void validate(const AdvPair& pair) {
  if (pair.vanilla.empty() || pair.adversarial.empty()) {
    throw ValidationError("adversarial pair has an empty side");
  }
  if (pair.vanilla == pair.adversarial) {
    throw ValidationError("adversarial instruction must differ from the vanilla one");
  }
}

void validate(const MCQItem& item) {
  if (item.question.empty()) throw ValidationError("mcq item '" + item.id + "' has empty question");
  if (item.choices.size() < 2) throw ValidationError("mcq item '" + item.id + "' needs >= 2 choices");
  if (item.answer_index < 0 || item.answer_index >= static_cast<int>(item.choices.size())) {
    throw ValidationError("mcq item '" + item.id + "' answer_index out of range");
  }
}

void validate(const OpenQAItem& item) {
  if (item.question.empty()) throw ValidationError("openqa item '" + item.id + "' has empty question");
  if (item.gold_answer.empty()) throw ValidationError("openqa item '" + item.id + "' has empty gold_answer");
}

std::vector<HarmfulItem> load_harmful_benchmark(const std::filesystem::path& path) {
  auto records = read_jsonl(path);
  std::vector<HarmfulItem> out;
  out.reserve(records.size());
  std::set<std::string> seen;
  for (const auto& r : records) {
    HarmfulItem item;
    if (!r.contains("id")) throw ValidationError("harmful record missing required field 'id'");
    if (!r.contains("instruction")) {
      throw ValidationError("harmful record missing required field 'instruction'");
    }
    item.id = r.at("id").get<std::string>();
    item.instruction = r.at("instruction").get<std::string>();
    if (r.contains("prefill_suffix") && !r.at("prefill_suffix").is_null()) {
      item.prefill_suffix = r.at("prefill_suffix").get<std::string>();
    }
    item.category = r.value("category", "");
    validate(item);
    if (!seen.insert(item.id).second) throw ValidationError("duplicate harmful item id: " + item.id);
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<AdvPair> load_adv_pairs(const std::filesystem::path& path, std::size_t n,
                                    std::uint64_t seed) {
  auto records = read_jsonl(path);
  std::vector<AdvPair> all;
  all.reserve(records.size());
  for (const auto& r : records) {
    AdvPair pair;
    pair.vanilla = r.at("vanilla").get<std::string>();
    pair.adversarial = r.at("adversarial").get<std::string>();
    validate(pair);
    all.push_back(std::move(pair));
  }
  if (n > all.size()) {
    throw ValidationError("requested " + std::to_string(n) + " pairs but corpus has " +
                          std::to_string(all.size()));
  }
  seeded_shuffle(all, seed);
  all.resize(n);
  return all;
}

namespace {

MCQItem mcq_from_json(const nlohmann::json& r) {
  MCQItem item;
  item.id = r.at("id").get<std::string>();
  item.question = r.at("question").get<std::string>();
  item.choices = r.at("choices").get<std::vector<std::string>>();
  item.answer_index = r.at("answer_index").get<int>();
  if (r.contains("domain") && !r.at("domain").is_null()) {
    item.domain = r.at("domain").get<std::string>();
  }
  validate(item);
  return item;
}

// Minimal CSV reader: comma separated, double quotes for fields containing
// commas/quotes/newlines, "" escapes a quote.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::string content = read_text_file(path);
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  for (std::size_t i = 0; i < content.size(); ++i) {
    char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (!field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<MCQItem> load_mcq_csv(const std::filesystem::path& path) {
  auto rows = read_csv(path);
  if (rows.size() < 2) throw ValidationError("mcq csv needs a header and at least one row");
  const auto& header = rows[0];
  auto col = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  };
  const int c_id = col("id"), c_q = col("question"), c_ch = col("choices"),
            c_ans = col("answer_index"), c_dom = col("domain");
  if (c_id < 0 || c_q < 0 || c_ch < 0 || c_ans < 0) {
    throw ValidationError("mcq csv header must contain id,question,choices,answer_index");
  }
  std::vector<MCQItem> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() < header.size()) {
      throw ValidationError("mcq csv row " + std::to_string(i + 1) + " is short");
    }
    MCQItem item;
    item.id = row[static_cast<std::size_t>(c_id)];
    item.question = row[static_cast<std::size_t>(c_q)];
    std::istringstream choices(row[static_cast<std::size_t>(c_ch)]);
    std::string choice;
    while (std::getline(choices, choice, '|')) item.choices.push_back(choice);
    item.answer_index = std::stoi(row[static_cast<std::size_t>(c_ans)]);
    if (c_dom >= 0 && !row[static_cast<std::size_t>(c_dom)].empty()) {
      item.domain = row[static_cast<std::size_t>(c_dom)];
    }
    validate(item);
    out.push_back(std::move(item));
  }
  if (out.empty()) throw ValidationError("mcq csv has no data rows");
  return out;
}

}  // namespace

std::vector<MCQItem> load_mcq(const std::filesystem::path& path) {
  if (path.extension() == ".csv") return load_mcq_csv(path);
  auto records = read_jsonl(path);
  std::vector<MCQItem> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(mcq_from_json(r));
  return out;
}

std::vector<OpenQAItem> load_openqa(const std::filesystem::path& path) {
  auto records = read_jsonl(path);
  std::vector<OpenQAItem> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    OpenQAItem item;
    item.id = r.at("id").get<std::string>();
    item.question = r.at("question").get<std::string>();
    item.gold_answer = r.at("gold_answer").get<std::string>();
    validate(item);
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<std::string> load_instruction_list(const std::filesystem::path& path) {
  auto records = read_jsonl(path);
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    std::string instruction = r.at("instruction").get<std::string>();
    if (instruction.empty()) throw ValidationError("instruction record is empty");
    out.push_back(std::move(instruction));
  }
  return out;
}

std::vector<MCQItem> filter_by_domain(const std::vector<MCQItem>& items, const std::string& domain) {
  std::vector<MCQItem> out;
  for (const auto& item : items) {
    if (item.domain && *item.domain == domain) out.push_back(item);
  }
  return out;
}

void save_harmful_benchmark(const std::filesystem::path& path,
                            const std::vector<HarmfulItem>& items) {
  std::vector<nlohmann::json> records;
  records.reserve(items.size());
  for (const auto& item : items) {
    nlohmann::json r = {{"id", item.id}, {"instruction", item.instruction}, {"category", item.category}};
    if (item.prefill_suffix) r["prefill_suffix"] = *item.prefill_suffix;
    records.push_back(std::move(r));
  }
  write_jsonl(path, records);
}

void save_adv_pairs(const std::filesystem::path& path, const std::vector<AdvPair>& pairs) {
  std::vector<nlohmann::json> records;
  records.reserve(pairs.size());
  for (const auto& p : pairs) {
    records.push_back({{"vanilla", p.vanilla}, {"adversarial", p.adversarial}});
  }
  write_jsonl(path, records);
}

void save_mcq(const std::filesystem::path& path, const std::vector<MCQItem>& items) {
  std::vector<nlohmann::json> records;
  records.reserve(items.size());
  for (const auto& item : items) {
    nlohmann::json r = {{"id", item.id},
                        {"question", item.question},
                        {"choices", item.choices},
                        {"answer_index", item.answer_index}};
    if (item.domain) r["domain"] = *item.domain;
    records.push_back(std::move(r));
  }
  write_jsonl(path, records);
}

void save_openqa(const std::filesystem::path& path, const std::vector<OpenQAItem>& items) {
  std::vector<nlohmann::json> records;
  records.reserve(items.size());
  for (const auto& item : items) {
    records.push_back({{"id", item.id}, {"question", item.question}, {"gold_answer", item.gold_answer}});
  }
  write_jsonl(path, records);
}

}  // namespace intentguard
