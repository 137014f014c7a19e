#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sdft/vocab.hpp"

namespace sdft {

// Token layout shared by every toy task: specials, task markers, then content tokens.
struct TaskLayout {
  Vocab vocab{20, 1, 2, 0, 3};
  TokenId first_marker = 4;
  int n_markers = 4;
  TokenId first_content = 8;
  int n_content = 12;
  int query_len = 2;
  int distractors = 1;  // extra pairs in each demonstration
  // Native rendering, used by pretraining documents: q1 f(q1) q2 f(q2) … when set, f(q1) f(q2) … otherwise.
  bool echo_keys = true;
  // Rendering of the expert reference answers in task instances. Differing from the native one
  // makes supervised targets off-policy for the base; graders accept either rendering.
  bool expert_echo_keys = false;

  void validate() const;
  TokenId marker(int i) const { return first_marker + i; }
  TokenId content(int i) const { return first_content + i; }
  bool is_content(TokenId t) const { return t >= first_content && t < first_content + n_content; }
  // Longest rendering of an answer, and the same plus eos.
  int answer_len() const { return echo_keys || expert_echo_keys ? 2 * query_len : query_len; }
  int response_len() const { return answer_len() + 1; }
  // Length of ⟨bos⟩ x ⟨sep⟩ c ⟨sep⟩ for a mapping instance.
  int teacher_prompt_len() const { return 3 + (1 + query_len) + 2 * (query_len + distractors); }
  // Ordered tuples of distinct content tokens.
  std::int64_t query_capacity() const;
};

struct TaskInstance {
  std::string task_id;
  TokenSeq x;
  TokenSeq c;
  TokenSeq answer;
  std::vector<TokenSeq> also_accept;  // equivalent renderings graded as correct
  bool operator==(const TaskInstance&) const = default;
};

// A bijection over the content tokens, tagged by the marker that opens every query.
struct MappingTask {
  std::string id;
  std::uint64_t seed = 0;
  TokenId marker = 0;
  TokenId first_content = 0;
  std::vector<TokenId> image;  // image[i] = f(first_content + i)

  TokenId apply(TokenId t) const { return image.at(static_cast<std::size_t>(t - first_content)); }
};

MappingTask make_mapping_task(const TaskLayout& layout, TokenId marker, std::uint64_t seed, std::string id);

// ⟨bos⟩ x ⟨sep⟩
TokenSeq build_student_prompt(const TokenSeq& x, const Vocab& vocab);
// ⟨bos⟩ x ⟨sep⟩ c ⟨sep⟩; throws InputError when longer than max_len (0 = unchecked).
TokenSeq build_teacher_prompt(const TokenSeq& x, const TokenSeq& c, const Vocab& vocab, int max_len = 0);
// answer ⧺ ⟨eos⟩, the sequence greedy decoding must reproduce.
TokenSeq reference_response(const TaskInstance& inst, const Vocab& vocab);

// Instance for one query: x = marker q, answer = f(q) in the expert rendering (each f(q_i)
// preceded by q_i when expert_echo_keys is set), also_accept = the native rendering when it
// differs, c = the pairs (d, f(d)) of a different query d holding q's tokens plus distractors, in
// shuffled order.
TaskInstance make_mapping_instance(const MappingTask& task, const TaskLayout& layout, const TokenSeq& query,
                                   std::uint64_t seed);
// n instances with distinct queries. Throws InputError if n exceeds the query capacity.
std::vector<TaskInstance> gen_task_instances(const MappingTask& task, const TaskLayout& layout, int n,
                                             std::uint64_t seed);

struct TaskSplit {
  std::vector<TaskInstance> train, val, test;
};
// Disjoint train/val/test queries; val takes ceil(val_fraction·n_train) out of the n_train pool.
TaskSplit split_task(const MappingTask& task, const TaskLayout& layout, int n_train, int n_test,
                     double val_fraction, std::uint64_t seed);

// Pretraining documents. Each task is a fresh random mapping; a document is a full teacher-format
// line (prompt then the natively rendered answer and eos), or with probability student_fraction the
// same line with the demonstration removed.
struct Corpus {
  std::vector<TokenSeq> docs;
};
Corpus gen_meta_corpus(std::uint64_t seed, int n_tasks, int instances_per_task, const TaskLayout& layout,
                       double student_fraction = 0.25);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path, const Vocab& vocab);

// Knowledge toy task: (entity, attribute) → value facts.
struct Fact {
  TokenId entity, attribute, value;
};

struct FactTable {
  std::string id;
  std::uint64_t seed = 0;
  std::vector<Fact> facts;
};

enum class FactContext { text, answer, text_and_answer };
FactContext parse_fact_context(const std::string& name);

// Entities and values come from the content tokens, attributes from the markers
// (the last marker is reserved for inversion questions).
FactTable make_fact_table(const TaskLayout& layout, int n_entities, int attributes_per_entity, std::uint64_t seed,
                          std::string id);
// x = (entity, attribute); c per the context arm: the entity's facts as
// (entity attribute value) triples, the bare value, or both; answer = value.
std::vector<TaskInstance> gen_task_instances(const FactTable& table, int n, std::uint64_t seed,
                                             FactContext context = FactContext::text_and_answer);
// Inversion questions x = (attribute, value, inversion marker) → entity, for values unique
// within their attribute. Throws InputError if the table has too few such facts.
std::vector<TaskInstance> gen_ood_instances(const FactTable& table, const TaskLayout& layout, int n,
                                            std::uint64_t seed);

// One JSON object per line: {"task_id", "x", "c", "answer"} plus "also_accept" when non-empty.
void save_dataset(const std::vector<TaskInstance>& instances, const std::filesystem::path& path);
// Throws ParseError naming the offending line.
std::vector<TaskInstance> load_dataset(const std::filesystem::path& path);

}  // namespace sdft
