#include "guidedial/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "guidedial/errors.hpp"

namespace guidedial {

namespace {

using NgramCounts = std::map<Tokens, int>;

NgramCounts ngrams(const Tokens& tokens, int n) {
  NgramCounts out;
  for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i) {
    ++out[Tokens(tokens.begin() + static_cast<long>(i), tokens.begin() + static_cast<long>(i) + n)];
  }
  return out;
}

double overlap_f1(const Tokens& a, const Tokens& b) {
  if (a.empty() || b.empty()) return 0.0;
  auto ca = ngrams(a, 1);
  auto cb = ngrams(b, 1);
  long common = 0;
  for (const auto& [tok, n] : ca) {
    auto it = cb.find(tok);
    if (it != cb.end()) common += std::min(n, it->second);
  }
  if (common == 0) return 0.0;
  double p = static_cast<double>(common) / static_cast<double>(a.size());
  double r = static_cast<double>(common) / static_cast<double>(b.size());
  return 2.0 * p * r / (p + r);
}

bool is_punctuation(const std::string& tok) {
  return !tok.empty() && std::all_of(tok.begin(), tok.end(), [](unsigned char c) { return std::ispunct(c) != 0; });
}

}  // namespace

double perplexity(const std::vector<std::vector<double>>& nlls) {
  double total = 0.0;
  long count = 0;
  for (const auto& list : nlls) {
    for (double v : list) total += v;
    count += static_cast<long>(list.size());
  }
  if (count == 0) throw ValidationError("perplexity: no tokens");
  return std::exp(total / static_cast<double>(count));
}

double word_f1(const Tokens& generated, const Tokens& reference) { return overlap_f1(generated, reference); }

double bleu(const Tokens& generated, const Tokens& reference, int max_n) {
  if (max_n < 1) throw ValidationError("bleu: max_n must be >= 1");
  if (generated.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    auto cand = ngrams(generated, n);
    auto ref = ngrams(reference, n);
    long total = 0;
    long matched = 0;
    for (const auto& [g, c] : cand) {
      total += c;
      auto it = ref.find(g);
      if (it != ref.end()) matched += std::min(c, it->second);
    }
    double p = matched > 0 ? static_cast<double>(matched) / static_cast<double>(total)
                           : 1.0 / static_cast<double>(total + 1);
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(generated.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / max_n);
}

double distinct(const std::vector<Tokens>& corpus, int n) {
  if (n < 1) throw ValidationError("distinct: n must be >= 1");
  std::set<Tokens> unique;
  long total = 0;
  for (const auto& utt : corpus) {
    for (const auto& [g, c] : ngrams(utt, n)) {
      unique.insert(g);
      total += c;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(unique.size()) / static_cast<double>(total);
}

const StopwordSet& default_stopwords() {
  static const StopwordSet words = {
      "a",    "an",   "the",  "and",  "or",   "but",  "of",   "to",   "in",   "on",   "at",    "for",  "with",
      "by",   "from", "is",   "are",  "was",  "were", "be",   "been", "am",   "it",   "its",   "this", "that",
      "these", "those", "i",  "you",  "he",   "she",  "we",   "they", "me",   "him",  "her",   "us",   "them",
      "my",   "your", "his",  "our",  "their", "do",  "does", "did",  "have", "has",  "had",   "not",  "no",
      "so",   "as",   "if",   "then", "than", "there", "here", "what", "which", "who", "how",  "can",  "will",
      "would", "should", "could", "about", "also", "very", "too", "just", "all", "any", "some", "yes", "s", "t"};
  return words;
}

Tokens content_tokens(const Tokens& tokens, const StopwordSet& stopwords) {
  Tokens out;
  for (const auto& t : tokens) {
    if (!is_punctuation(t) && !stopwords.count(t)) out.push_back(t);
  }
  return out;
}

std::vector<KnowledgeTriple> grounded_knowledge(const std::vector<KnowledgeTriple>& pool, const Tokens& reference,
                                                const StopwordSet& stopwords) {
  std::set<std::string> ref(reference.begin(), reference.end());
  std::vector<KnowledgeTriple> out;
  for (const auto& k : pool) {
    Tokens obj = content_tokens(tokenize(k.object), stopwords);
    if (!obj.empty() && std::all_of(obj.begin(), obj.end(), [&](const std::string& t) { return ref.count(t) > 0; })) {
      out.push_back(k);
    }
  }
  return out;
}

double knowledge_f1(const Tokens& generated, const std::vector<KnowledgeTriple>& gold, const StopwordSet& stopwords) {
  Tokens knowledge;
  for (const auto& k : gold) {
    Tokens obj = content_tokens(tokenize(k.object), stopwords);
    knowledge.insert(knowledge.end(), obj.begin(), obj.end());
  }
  return overlap_f1(content_tokens(generated, stopwords), knowledge);
}

bool target_achieved(const std::string& utterance, const std::string& topic) {
  const Tokens needle = tokenize(topic);
  const Tokens hay = tokenize(utterance);
  return !needle.empty() && std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

double failure_rate(const std::vector<std::pair<std::string, std::string>>& dialogues) {
  if (dialogues.empty()) throw ValidationError("failure_rate: no dialogues");
  long failed = 0;
  for (const auto& [utt, topic] : dialogues) failed += target_achieved(utt, topic) ? 0 : 1;
  return static_cast<double>(failed) / static_cast<double>(dialogues.size());
}

// ---------------------------------------------------------------------------

nlohmann::json EvalReport::to_json() const {
  return {{"split", split},
          {"n_samples", n_samples},
          {"n_final", n_final},
          {"n_grounded", n_grounded},
          {"mode", std::string(to_string(options.mode))},
          {"m", options.m},
          {"delta", options.delta},
          {"lambda", options.lambda},
          {"max_decode_len", options.max_decode_len},
          {"use_csm", options.use_csm},
          {"use_ikb", options.use_ikb},
          {"drop_knowledge", options.drop_knowledge},
          {"drop_profile", options.drop_profile},
          {"ppl", ppl},
          {"word_f1", word_f1},
          {"bleu1", bleu1},
          {"bleu2", bleu2},
          {"dist1", dist1},
          {"dist2", dist2},
          {"knowledge_f1", knowledge_f1},
          {"failure", failure}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.split = j.at("split").get<std::string>();
  r.n_samples = j.at("n_samples").get<long>();
  r.n_final = j.at("n_final").get<long>();
  r.n_grounded = j.at("n_grounded").get<long>();
  r.options.mode = parse_selection_mode(j.at("mode").get<std::string>());
  r.options.m = j.at("m").get<int>();
  r.options.delta = j.at("delta").get<double>();
  r.options.lambda = j.at("lambda").get<double>();
  r.options.max_decode_len = j.at("max_decode_len").get<int>();
  r.options.use_csm = j.at("use_csm").get<bool>();
  r.options.use_ikb = j.at("use_ikb").get<bool>();
  r.options.drop_knowledge = j.at("drop_knowledge").get<bool>();
  r.options.drop_profile = j.at("drop_profile").get<bool>();
  r.ppl = j.at("ppl").get<double>();
  r.word_f1 = j.at("word_f1").get<double>();
  r.bleu1 = j.at("bleu1").get<double>();
  r.bleu2 = j.at("bleu2").get<double>();
  r.dist1 = j.at("dist1").get<double>();
  r.dist2 = j.at("dist2").get<double>();
  r.knowledge_f1 = j.at("knowledge_f1").get<double>();
  r.failure = j.at("failure").get<double>();
  return r;
}

std::string EvalReport::table_header() {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-10s %9s %7s %7s %7s %7s %7s %7s %7s", "split", "PPL", "W.F1", "BLEU-1", "BLEU-2",
                "DIST-1", "DIST-2", "K.F1", "Fail.");
  return buf;
}

std::string EvalReport::table_row() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %9.2f %7.2f %7.3f %7.3f %7.3f %7.3f %7.2f %7.2f", split.c_str(), ppl,
                100.0 * word_f1, bleu1, bleu2, dist1, dist2, 100.0 * knowledge_f1, 100.0 * failure);
  return buf;
}

template <typename T>
EvalReport evaluate_split(const std::vector<DialogueSample>& samples, const DialogueModel<T>& model,
                          const Vocabulary& vocab, const KeywordInventory& inventory, const InferenceOptions& options,
                          const EncodeLimits& limits, const std::string& split_name,
                          std::vector<SamplePrediction>* predictions) {
  options.validate();
  if (samples.empty()) throw ValidationError("evaluate_split: split '" + split_name + "' is empty");
  EvalReport report;
  report.split = split_name;
  report.options = options;
  report.n_samples = static_cast<long>(samples.size());

  std::vector<std::vector<double>> nlls;
  std::vector<Tokens> generated_corpus;
  std::vector<std::pair<std::string, std::string>> finals;
  double wf1 = 0.0, b1 = 0.0, b2 = 0.0, kf1 = 0.0;

  for (size_t i = 0; i < samples.size(); ++i) {
    const DialogueSample& sample = samples[i];
    try {
      TrainingExample ex = encode_sample(sample, vocab, inventory, options.m, limits);
      GenerationContext<T> ctx = prepare_context(model, ex, options);
      GenerationResult gen = generate(model, ctx);
      nlls.push_back(score_reference(model, ctx, ex.reference_ids));

      Tokens hyp = vocab.to_tokens(gen.tokens);
      Tokens ref = tokenize(sample.reference);
      wf1 += word_f1(hyp, ref);
      b1 += bleu(hyp, ref, 1);
      b2 += bleu(hyp, ref, 2);
      auto gold = grounded_knowledge(sample.knowledge, ref);
      if (!gold.empty()) {
        kf1 += knowledge_f1(hyp, gold);
        ++report.n_grounded;
      }
      const std::string text = join_tokens(hyp);
      const bool final_turn = sample.bridge.size() == 1;
      const std::string& topic = inventory.topic_name(sample.target.topic_id);
      if (final_turn) finals.emplace_back(text, topic);
      if (predictions) {
        predictions->push_back({static_cast<long>(i), text, sample.reference, final_turn, target_achieved(text, topic)});
      }
      generated_corpus.push_back(std::move(hyp));
    } catch (const std::exception& e) {
      throw EvaluationError("sample " + std::to_string(i) + ": " + e.what(), static_cast<long>(i));
    }
  }

  const double n = static_cast<double>(samples.size());
  report.ppl = perplexity(nlls);
  report.word_f1 = wf1 / n;
  report.bleu1 = b1 / n;
  report.bleu2 = b2 / n;
  report.dist1 = distinct(generated_corpus, 1);
  report.dist2 = distinct(generated_corpus, 2);
  report.knowledge_f1 = report.n_grounded ? kf1 / static_cast<double>(report.n_grounded) : 0.0;
  report.n_final = static_cast<long>(finals.size());
  report.failure = finals.empty() ? 0.0 : failure_rate(finals);
  return report;
}

template EvalReport evaluate_split(const std::vector<DialogueSample>&, const DialogueModel<float>&, const Vocabulary&,
                                   const KeywordInventory&, const InferenceOptions&, const EncodeLimits&,
                                   const std::string&, std::vector<SamplePrediction>*);
template EvalReport evaluate_split(const std::vector<DialogueSample>&, const DialogueModel<double>&, const Vocabulary&,
                                   const KeywordInventory&, const InferenceOptions&, const EncodeLimits&,
                                   const std::string&, std::vector<SamplePrediction>*);

}  // namespace guidedial
