#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "guidedial/corpus.hpp"

namespace guidedial {

/// Knobs for the synthetic target-guided dialogue generator.
///
/// Each dialogue walks from an optional greeting through knowledge-linked
/// intermediate keywords to a goal keyword. Every system turn uses a phrase
/// template tied to its keyword type and mentions the keyword topic, so the
/// type -> phrase correlation is planted and learnable.
struct SynthOptions {
  std::uint64_t seed = 1;
  int train_dialogues = 40;
  int dev_dialogues = 8;
  int test_id_dialogues = 8;
  int test_ood_dialogues = 8;
  /// Topics generated per topic kind (movie, song, star, ...).
  int topics_per_kind = 8;
  /// Share of goal topics held out as targets for test_ood only.
  double ood_fraction = 0.25;
  /// Maximum number of intermediate keywords between greeting and goal.
  int max_path = 2;
  /// Add training dialogues until every generated topic occurs in train.
  bool cover_all_topics = false;
};

using SynthCorpus = RawSplit;

/// The thirteen keyword types used by the generator.
const std::vector<std::string>& synth_types();

/// Topic count per kind that yields 640 distinct topics with cover_all_topics.
inline constexpr int kDurecdialTopicsPerKind = 80;

SynthCorpus synthesize(const SynthOptions& options);

/// Writes train/dev/test_id/test_ood.jsonl.
void write_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus);

}  // namespace guidedial
