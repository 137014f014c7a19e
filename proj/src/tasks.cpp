#include "sdft/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "sdft/errors.hpp"
#include "sdft/rng.hpp"

namespace sdft {

void TaskLayout::validate() const {
  vocab.validate();
  auto in_range = [&](TokenId first, int n) { return first >= 0 && n >= 0 && first + n <= vocab.size; };
  if (!in_range(first_marker, n_markers) || !in_range(first_content, n_content))
    throw ConfigError("task layout: marker or content range exceeds the vocabulary");
  for (TokenId s : {vocab.bos, vocab.eos, vocab.pad, vocab.sep}) {
    if (s >= first_marker && s < first_marker + n_markers) throw ConfigError("task layout: marker overlaps a special");
    if (s >= first_content && s < first_content + n_content)
      throw ConfigError("task layout: content overlaps a special");
  }
  if (first_marker < first_content + n_content && first_content < first_marker + n_markers)
    throw ConfigError("task layout: marker and content ranges overlap");
  if (n_markers < 1) throw ConfigError("task layout: need at least one marker");
  if (query_len < 1 || distractors < 0 || query_len + distractors > n_content)
    throw ConfigError("task layout: query_len + distractors must fit in the content tokens");
}

std::int64_t TaskLayout::query_capacity() const {
  std::int64_t c = 1;
  for (int i = 0; i < query_len; ++i) c *= n_content - i;
  return c;
}

MappingTask make_mapping_task(const TaskLayout& layout, TokenId marker, std::uint64_t seed, std::string id) {
  layout.validate();
  if (marker < layout.first_marker || marker >= layout.first_marker + layout.n_markers)
    throw InputError("mapping task marker " + std::to_string(marker) + " is not a marker token");
  MappingTask t;
  t.id = std::move(id);
  t.seed = seed;
  t.marker = marker;
  t.first_content = layout.first_content;
  t.image.resize(layout.n_content);
  std::iota(t.image.begin(), t.image.end(), layout.first_content);
  Rng rng(derive_seed(seed, {0x6d6170}));
  rng.shuffle(t.image.begin(), t.image.end());
  return t;
}

TokenSeq build_student_prompt(const TokenSeq& x, const Vocab& vocab) {
  if (x.empty()) throw InputError("empty query");
  TokenSeq p{vocab.bos};
  p.insert(p.end(), x.begin(), x.end());
  p.push_back(vocab.sep);
  return p;
}

TokenSeq build_teacher_prompt(const TokenSeq& x, const TokenSeq& c, const Vocab& vocab, int max_len) {
  if (c.empty()) throw InputError("empty demonstration");
  TokenSeq p = build_student_prompt(x, vocab);
  p.insert(p.end(), c.begin(), c.end());
  p.push_back(vocab.sep);
  if (max_len > 0 && static_cast<int>(p.size()) > max_len)
    throw InputError("teacher prompt of length " + std::to_string(p.size()) + " exceeds " + std::to_string(max_len));
  return p;
}

TokenSeq reference_response(const TaskInstance& inst, const Vocab& vocab) {
  TokenSeq r = inst.answer;
  r.push_back(vocab.eos);
  return r;
}

namespace {

std::vector<TokenSeq> all_queries(const TaskLayout& layout) {
  std::vector<TokenSeq> out;
  TokenSeq cur;
  std::vector<bool> used(layout.n_content, false);
  auto rec = [&](auto&& self) -> void {
    if (static_cast<int>(cur.size()) == layout.query_len) {
      out.push_back(cur);
      return;
    }
    for (int i = 0; i < layout.n_content; ++i) {
      if (used[i]) continue;
      used[i] = true;
      cur.push_back(layout.content(i));
      self(self);
      cur.pop_back();
      used[i] = false;
    }
  };
  rec(rec);
  return out;
}

std::vector<TokenSeq> sample_queries(const TaskLayout& layout, int n, Rng& rng) {
  if (n < 0 || n > layout.query_capacity())
    throw InputError("requested " + std::to_string(n) + " queries but only " +
                     std::to_string(layout.query_capacity()) + " distinct queries exist");
  std::vector<TokenSeq> all = all_queries(layout);
  rng.shuffle(all.begin(), all.end());
  all.resize(n);
  return all;
}

}  // namespace

TaskInstance make_mapping_instance(const MappingTask& task, const TaskLayout& layout, const TokenSeq& query,
                                   std::uint64_t seed) {
  if (static_cast<int>(query.size()) != layout.query_len) throw InputError("query length does not match layout");
  Rng rng(seed);
  TaskInstance inst;
  inst.task_id = task.id;
  inst.x.push_back(task.marker);
  inst.x.insert(inst.x.end(), query.begin(), query.end());
  auto render = [&](bool echo) {
    TokenSeq a;
    for (TokenId q : query) {
      if (echo) a.push_back(q);
      a.push_back(task.apply(q));
    }
    return a;
  };
  inst.answer = render(layout.expert_echo_keys);
  if (layout.echo_keys != layout.expert_echo_keys) inst.also_accept.push_back(render(layout.echo_keys));

  TokenSeq demo = query;
  std::vector<TokenId> pool;
  for (int i = 0; i < layout.n_content; ++i)
    if (std::find(query.begin(), query.end(), layout.content(i)) == query.end()) pool.push_back(layout.content(i));
  rng.shuffle(pool.begin(), pool.end());
  demo.insert(demo.end(), pool.begin(), pool.begin() + layout.distractors);
  // Without distractors the demonstration must still be a different query.
  do {
    rng.shuffle(demo.begin(), demo.end());
  } while (demo == query && demo.size() > 1);
  for (TokenId d : demo) {
    inst.c.push_back(d);
    inst.c.push_back(task.apply(d));
  }
  return inst;
}

std::vector<TaskInstance> gen_task_instances(const MappingTask& task, const TaskLayout& layout, int n,
                                             std::uint64_t seed) {
  if (n < 1) throw InputError("gen_task_instances: n must be >= 1");
  Rng rng(derive_seed(seed, {0x71}));
  const auto queries = sample_queries(layout, n, rng);
  std::vector<TaskInstance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < queries.size(); ++i)
    out.push_back(make_mapping_instance(task, layout, queries[i], derive_seed(seed, {0x64, i})));
  return out;
}

TaskSplit split_task(const MappingTask& task, const TaskLayout& layout, int n_train, int n_test,
                     double val_fraction, std::uint64_t seed) {
  auto all = gen_task_instances(task, layout, n_train + n_test, seed);
  const int n_val = static_cast<int>(std::ceil(val_fraction * n_train - 1e-12));
  if (n_val >= n_train) throw InputError("validation split leaves no training instances");
  TaskSplit s;
  s.val.assign(all.begin(), all.begin() + n_val);
  s.train.assign(all.begin() + n_val, all.begin() + n_train);
  s.test.assign(all.begin() + n_train, all.end());
  return s;
}

Corpus gen_meta_corpus(std::uint64_t seed, int n_tasks, int instances_per_task, const TaskLayout& task_layout,
                       double student_fraction) {
  task_layout.validate();
  TaskLayout layout = task_layout;
  layout.expert_echo_keys = layout.echo_keys;
  if (n_tasks < 1 || instances_per_task < 1) throw InputError("gen_meta_corpus: counts must be >= 1");
  Corpus corpus;
  corpus.docs.reserve(static_cast<std::size_t>(n_tasks) * instances_per_task);
  for (int k = 0; k < n_tasks; ++k) {
    Rng rng(derive_seed(seed, {0x7461736b, static_cast<std::uint64_t>(k)}));
    const TokenId marker = layout.marker(static_cast<int>(rng.below(layout.n_markers)));
    const MappingTask task = make_mapping_task(layout, marker, rng.next(), "meta");
    const auto queries = sample_queries(layout, instances_per_task, rng);
    for (const TokenSeq& q : queries) {
      const TaskInstance inst = make_mapping_instance(task, layout, q, rng.next());
      TokenSeq doc = rng.uniform() < student_fraction ? build_student_prompt(inst.x, layout.vocab)
                                                      : build_teacher_prompt(inst.x, inst.c, layout.vocab);
      const TokenSeq r = reference_response(inst, layout.vocab);
      doc.insert(doc.end(), r.begin(), r.end());
      corpus.docs.push_back(std::move(doc));
    }
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write corpus " + path.string());
  for (const TokenSeq& d : corpus.docs) {
    for (std::size_t i = 0; i < d.size(); ++i) out << (i ? " " : "") << d[i];
    out << '\n';
  }
}

Corpus load_corpus(const std::filesystem::path& path, const Vocab& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read corpus " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    TokenSeq doc;
    long v;
    while (ss >> v) {
      if (v < 0 || v >= vocab.size) throw ParseError(line_no, "token id " + std::to_string(v) + " out of range");
      doc.push_back(static_cast<TokenId>(v));
    }
    if (!ss.eof()) throw ParseError(line_no, "expected whitespace-separated token ids");
    if (doc.empty()) throw ParseError(line_no, "empty document");
    corpus.docs.push_back(std::move(doc));
  }
  return corpus;
}

FactContext parse_fact_context(const std::string& name) {
  if (name == "text") return FactContext::text;
  if (name == "answer") return FactContext::answer;
  if (name == "text+answer") return FactContext::text_and_answer;
  throw ConfigError("unknown fact context '" + name + "' (valid: text, answer, text+answer)");
}

FactTable make_fact_table(const TaskLayout& layout, int n_entities, int attributes_per_entity, std::uint64_t seed,
                          std::string id) {
  layout.validate();
  const int n_attr = layout.n_markers - 1;
  if (n_attr < 1) throw ConfigError("fact table needs at least two markers");
  if (n_entities < 1 || n_entities > layout.n_content)
    throw InputError("fact table: n_entities must be in [1, " + std::to_string(layout.n_content) + "]");
  if (attributes_per_entity < 1 || attributes_per_entity > n_attr)
    throw InputError("fact table: attributes_per_entity must be in [1, " + std::to_string(n_attr) + "]");
  Rng rng(derive_seed(seed, {0x66616374}));
  std::vector<TokenId> entities(layout.n_content);
  std::iota(entities.begin(), entities.end(), layout.first_content);
  rng.shuffle(entities.begin(), entities.end());
  entities.resize(n_entities);
  FactTable t;
  t.id = std::move(id);
  t.seed = seed;
  for (TokenId e : entities) {
    std::vector<TokenId> attrs(n_attr);
    std::iota(attrs.begin(), attrs.end(), layout.first_marker);
    rng.shuffle(attrs.begin(), attrs.end());
    attrs.resize(attributes_per_entity);
    std::sort(attrs.begin(), attrs.end());
    for (TokenId a : attrs) t.facts.push_back({e, a, layout.content(static_cast<int>(rng.below(layout.n_content)))});
  }
  return t;
}

std::vector<TaskInstance> gen_task_instances(const FactTable& table, int n, std::uint64_t seed, FactContext context) {
  if (n < 1) throw InputError("gen_task_instances: n must be >= 1");
  if (n > static_cast<int>(table.facts.size()))
    throw InputError("requested " + std::to_string(n) + " questions but the table holds " +
                     std::to_string(table.facts.size()) + " facts");
  std::vector<std::size_t> order(table.facts.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {0x71}));
  rng.shuffle(order.begin(), order.end());
  std::vector<TaskInstance> out;
  for (int i = 0; i < n; ++i) {
    const Fact& f = table.facts[order[i]];
    TaskInstance inst;
    inst.task_id = table.id;
    inst.x = {f.entity, f.attribute};
    inst.answer = {f.value};
    if (context != FactContext::answer)
      for (const Fact& g : table.facts)
        if (g.entity == f.entity) inst.c.insert(inst.c.end(), {g.entity, g.attribute, g.value});
    if (context != FactContext::text) inst.c.push_back(f.value);
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<TaskInstance> gen_ood_instances(const FactTable& table, const TaskLayout& layout, int n,
                                            std::uint64_t seed) {
  if (n < 1) throw InputError("gen_ood_instances: n must be >= 1");
  std::set<TokenId> entities;
  for (const Fact& f : table.facts) entities.insert(f.entity);
  if (table.facts.size() < 2 * entities.size())
    throw InputError("fact table needs at least two attributes per entity on average for inversion questions");
  std::vector<const Fact*> unique;
  for (const Fact& f : table.facts) {
    const auto same = std::count_if(table.facts.begin(), table.facts.end(), [&](const Fact& g) {
      return g.attribute == f.attribute && g.value == f.value;
    });
    if (same == 1) unique.push_back(&f);
  }
  if (static_cast<int>(unique.size()) < n)
    throw InputError("only " + std::to_string(unique.size()) + " facts have a value unique within their attribute");
  Rng rng(derive_seed(seed, {0x6f6f64}));
  rng.shuffle(unique.begin(), unique.end());
  const TokenId inversion = layout.marker(layout.n_markers - 1);
  std::vector<TaskInstance> out;
  for (int i = 0; i < n; ++i) {
    const Fact& f = *unique[i];
    out.push_back({table.id + "-ood", {f.attribute, f.value, inversion}, {}, {f.entity}, {}});
  }
  return out;
}

void save_dataset(const std::vector<TaskInstance>& instances, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write dataset " + path.string());
  for (const TaskInstance& i : instances) {
    nlohmann::ordered_json j;
    j["task_id"] = i.task_id;
    j["x"] = i.x;
    j["c"] = i.c;
    j["answer"] = i.answer;
    if (!i.also_accept.empty()) j["also_accept"] = i.also_accept;
    out << j.dump() << '\n';
  }
}

std::vector<TaskInstance> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read dataset " + path.string());
  std::vector<TaskInstance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TaskInstance inst;
      inst.task_id = j.at("task_id").get<std::string>();
      inst.x = j.at("x").get<TokenSeq>();
      inst.c = j.at("c").get<TokenSeq>();
      inst.answer = j.at("answer").get<TokenSeq>();
      if (inst.answer.empty()) throw ParseError(line_no, "empty answer");
      if (j.contains("also_accept")) inst.also_accept = j.at("also_accept").get<std::vector<TokenSeq>>();
      out.push_back(std::move(inst));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

}  // namespace sdft
