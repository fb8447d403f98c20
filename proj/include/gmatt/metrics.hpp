#pragma once

#include <bitset>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gmatt/dataset.hpp"
#include "gmatt/grammar.hpp"

namespace gmatt {

constexpr int kFingerprintBits = 2048;
constexpr int kFingerprintVersion = 1;
constexpr int kMaxLeafNgram = 7;

// Deterministic structural fingerprint over a grammar tree: every
// root-to-node label path and every leaf n-gram (n <= 7) is hashed into a
// 2048-bit set with 64-bit FNV-1a.
struct Fingerprint {
  std::bitset<kFingerprintBits> bits;

  int popcount() const { return static_cast<int>(bits.count()); }
};

Fingerprint fingerprint(const std::string& smiles, const GrammarSpec& g = GrammarSpec::smiles());
Fingerprint fingerprint_of_tree(const GrammarTree& tree,
                                const GrammarSpec& g = GrammarSpec::smiles());

// |A & B| / |A | B|; defined as 0 when both sets are empty.
double tanimoto(const Fingerprint& a, const Fingerprint& b);

// Maximal fragment: longest precursor by SMILES length, ties broken by the
// lexicographically smallest string.
std::string maxfrag(const std::vector<std::string>& precursors);

// Similarity between two molecules for BASR accounting: identical strings
// score 1, strings that fail the grammar score 0, otherwise the Tanimoto
// coefficient of their fingerprints.
double maxfrag_similarity(const std::string& a, const std::string& b,
                          const GrammarSpec& g = GrammarSpec::smiles());

// One ranked hypothesis as consumed by evaluation.
struct RankedPrediction {
  std::vector<std::string> precursors;  // dot-separated parts of the hypothesis
  bool valid = false;                   // whole-string grammar validity
};

struct KMetrics {
  double accuracy = 0;
  double fractional_accuracy = 0;
  double maxfrag_accuracy = 0;
  double maxfrag_basr = 0;
  double invalid_rate = 0;
};

struct EvalReport {
  int num_records = 0;
  double basr_threshold = 0.85;
  std::vector<int> ks;
  std::map<int, KMetrics> per_k;
  // class id -> (k -> metrics); present only when class ids exist.
  std::map<int, std::map<int, KMetrics>> per_class;
  std::map<int, int> class_counts;
};

// The paper's metric battery at each requested k. Throws LengthMismatchError
// unless there is exactly one ranked list per truth record.
EvalReport evaluate(const std::vector<std::vector<RankedPrediction>>& predictions,
                    const std::vector<ReactionRecord>& truths, const std::vector<int>& ks,
                    double basr_threshold = 0.85, const GrammarSpec& g = GrammarSpec::smiles());

struct SimilarityHistogram {
  int n = 0;  // number of incorrect pairs considered
  double frac_050 = 0, frac_070 = 0, frac_085 = 0;
};

// Cumulative Tanimoto fractions over (incorrect top-1 maxfrag, truth maxfrag)
// pairs. n = 0 means the histogram is absent (no incorrect predictions).
SimilarityHistogram similarity_histogram(const std::vector<std::pair<std::string, std::string>>&
                                             incorrect_maxfrag_pairs,
                                         const GrammarSpec& g = GrammarSpec::smiles());

std::string to_json(const EvalReport& report);

}  // namespace gmatt
