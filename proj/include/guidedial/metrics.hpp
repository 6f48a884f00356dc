#pragma once

#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "guidedial/corpus.hpp"
#include "guidedial/generator.hpp"

namespace guidedial {

using Tokens = std::vector<std::string>;

/// exp(total NLL / total token count). Throws ValidationError when there are no tokens.
double perplexity(const std::vector<std::vector<double>>& nlls);

/// Multiset unigram overlap F1; 0 when either side is empty.
double word_f1(const Tokens& generated, const Tokens& reference);

/// Sentence BLEU: clipped n-gram precisions for n = 1..max_n, a zero match count
/// replaced by 1 / (candidate n-grams + 1), geometric mean, brevity penalty.
/// An empty candidate scores 0.
double bleu(const Tokens& generated, const Tokens& reference, int max_n);

/// Unique n-grams over total n-grams across the corpus; 0 when there are none.
double distinct(const std::vector<Tokens>& corpus, int n);

using StopwordSet = std::unordered_set<std::string>;

/// Common English function words; punctuation-only tokens are always excluded.
const StopwordSet& default_stopwords();

/// Content tokens of `tokens`: stopwords and punctuation-only tokens removed.
Tokens content_tokens(const Tokens& tokens, const StopwordSet& stopwords = default_stopwords());

/// Triples whose object has at least one content token and all of them occur in `reference`.
std::vector<KnowledgeTriple> grounded_knowledge(const std::vector<KnowledgeTriple>& pool, const Tokens& reference,
                                                const StopwordSet& stopwords = default_stopwords());

/// F1 between the content tokens of `generated` and the multiset of object content
/// tokens of `gold`. 0 when either side is empty after filtering.
double knowledge_f1(const Tokens& generated, const std::vector<KnowledgeTriple>& gold,
                    const StopwordSet& stopwords = default_stopwords());

/// True when the topic's tokens occur as a contiguous run of the utterance's tokens.
bool target_achieved(const std::string& utterance, const std::string& topic);

/// Fraction of (final utterance, target topic) pairs where the topic is missing.
double failure_rate(const std::vector<std::pair<std::string, std::string>>& dialogues);

/// Metric values are fractions in [0, 1] except ppl; the text table prints
/// W. F1, K. F1 and Fail. as percentages.
struct EvalReport {
  std::string split;
  long n_samples = 0;
  long n_final = 0;     // samples whose reference is the dialogue's last system turn
  long n_grounded = 0;  // samples with at least one grounded knowledge triple
  InferenceOptions options;

  double ppl = 0.0;
  double word_f1 = 0.0;
  double bleu1 = 0.0;
  double bleu2 = 0.0;
  double dist1 = 0.0;
  double dist2 = 0.0;
  double knowledge_f1 = 0.0;
  double failure = 0.0;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  static std::string table_header();
  std::string table_row() const;
};

struct SamplePrediction {
  long index = 0;
  std::string generated;
  std::string reference;
  bool final_turn = false;
  bool achieved = false;
};

/// Generation and scoring over `samples`; deterministic. Per-sample failures are
/// rethrown as EvaluationError naming the sample index.
template <typename T>
EvalReport evaluate_split(const std::vector<DialogueSample>& samples, const DialogueModel<T>& model,
                          const Vocabulary& vocab, const KeywordInventory& inventory, const InferenceOptions& options,
                          const EncodeLimits& limits, const std::string& split_name = "",
                          std::vector<SamplePrediction>* predictions = nullptr);

}  // namespace guidedial
