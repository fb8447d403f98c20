#include "gmatt/metrics.hpp"

#include <algorithm>
#include <cstdint>

#include <json.hpp>

namespace gmatt {

namespace {

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void set_bit(Fingerprint& fp, const std::string& key) {
  fp.bits.set(fnv1a64(key) % kFingerprintBits);
}

// Multiset intersection size of two sorted string vectors.
int multiset_intersection(std::vector<std::string> a, std::vector<std::string> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<std::string> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  return static_cast<int>(both.size());
}

bool multiset_equal(std::vector<std::string> a, std::vector<std::string> b) {
  if (a.size() != b.size()) return false;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b;
}

}  // namespace

Fingerprint fingerprint_of_tree(const GrammarTree& tree, const GrammarSpec& g) {
  Fingerprint fp;
  // Root-to-node label paths.
  std::vector<std::string> path_of(tree.size());
  std::vector<std::string> leaves;
  for (int n : preorder_nodes(tree)) {
    const TreeNode& node = tree.nodes[n];
    const std::string& label = g.name(node.symbol);
    path_of[n] = node.parent == -1 ? label : path_of[node.parent] + "/" + label;
    set_bit(fp, "P:" + path_of[n]);
    if (tree.is_leaf(n)) leaves.push_back(node.text);
  }
  // Leaf n-grams up to length 7.
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    std::string gram = "G:";
    for (std::size_t n = 0; n < kMaxLeafNgram && i + n < leaves.size(); ++n) {
      gram += '\x1f';
      gram += leaves[i + n];
      set_bit(fp, gram);
    }
  }
  return fp;
}

Fingerprint fingerprint(const std::string& smiles, const GrammarSpec& g) {
  return fingerprint_of_tree(parse(smiles, g), g);
}

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  const auto inter = (a.bits & b.bits).count();
  const auto uni = (a.bits | b.bits).count();
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::string maxfrag(const std::vector<std::string>& precursors) {
  if (precursors.empty()) throw DataError("maxfrag: empty precursor set");
  const std::string* best = &precursors[0];
  for (const std::string& p : precursors) {
    if (p.size() > best->size() || (p.size() == best->size() && p < *best)) best = &p;
  }
  return *best;
}

double maxfrag_similarity(const std::string& a, const std::string& b, const GrammarSpec& g) {
  if (a == b) return 1.0;
  try {
    Fingerprint fa = fingerprint(a, g);
    Fingerprint fb = fingerprint(b, g);
    return tanimoto(fa, fb);
  } catch (const DataError&) {
    return 0.0;  // parse failures count as zero similarity
  }
}

namespace {

struct Counts {
  long exact = 0;
  double fractional = 0;
  long maxfrag_hit = 0;
  long basr_hit = 0;
  long invalid = 0;
  long hypotheses = 0;
  long records = 0;

  KMetrics metrics() const {
    KMetrics m;
    if (records) {
      m.accuracy = static_cast<double>(exact) / records;
      m.fractional_accuracy = fractional / records;
      m.maxfrag_accuracy = static_cast<double>(maxfrag_hit) / records;
      m.maxfrag_basr = static_cast<double>(basr_hit) / records;
    }
    if (hypotheses) m.invalid_rate = static_cast<double>(invalid) / hypotheses;
    return m;
  }
};

}  // namespace

EvalReport evaluate(const std::vector<std::vector<RankedPrediction>>& predictions,
                    const std::vector<ReactionRecord>& truths, const std::vector<int>& ks,
                    double basr_threshold, const GrammarSpec& g) {
  if (predictions.size() != truths.size())
    throw LengthMismatchError("evaluate: need one ranked list per truth record");
  EvalReport report;
  report.num_records = static_cast<int>(truths.size());
  report.basr_threshold = basr_threshold;
  report.ks = ks;

  bool any_class = false;
  for (const ReactionRecord& t : truths)
    if (t.class_id) any_class = true;

  for (int k : ks) {
    if (k < 1) throw DataError("evaluate: k must be >= 1");
    Counts total;
    std::map<int, Counts> per_class;
    for (std::size_t i = 0; i < truths.size(); ++i) {
      const ReactionRecord& truth = truths[i];
      const auto& ranked = predictions[i];
      const std::string truth_max = maxfrag(truth.precursors);
      const int top = std::min<int>(k, static_cast<int>(ranked.size()));

      bool exact = false, max_hit = false, basr = false;
      double fractional = 0;
      long invalid = 0;
      for (int r = 0; r < top; ++r) {
        const RankedPrediction& p = ranked[r];
        if (!p.valid) ++invalid;
        if (p.precursors.empty()) continue;
        if (multiset_equal(p.precursors, truth.precursors)) exact = true;
        fractional = std::max(
            fractional, static_cast<double>(multiset_intersection(p.precursors, truth.precursors)) /
                            static_cast<double>(truth.precursors.size()));
        const std::string pred_max = maxfrag(p.precursors);
        if (pred_max == truth_max) max_hit = true;
        if (maxfrag_similarity(pred_max, truth_max, g) >= basr_threshold) basr = true;
      }
      auto apply = [&](Counts& c) {
        c.records += 1;
        c.exact += exact;
        c.fractional += fractional;
        c.maxfrag_hit += max_hit;
        c.basr_hit += basr;
        c.invalid += invalid;
        c.hypotheses += top;
      };
      apply(total);
      if (truth.class_id) apply(per_class[*truth.class_id]);
    }
    report.per_k[k] = total.metrics();
    if (any_class)
      for (const auto& [cls, counts] : per_class) {
        report.per_class[cls][k] = counts.metrics();
        report.class_counts[cls] = static_cast<int>(counts.records);
      }
  }
  return report;
}

SimilarityHistogram similarity_histogram(
    const std::vector<std::pair<std::string, std::string>>& incorrect_maxfrag_pairs,
    const GrammarSpec& g) {
  SimilarityHistogram h;
  h.n = static_cast<int>(incorrect_maxfrag_pairs.size());
  if (h.n == 0) return h;
  int c50 = 0, c70 = 0, c85 = 0;
  for (const auto& [pred, truth] : incorrect_maxfrag_pairs) {
    double tc = maxfrag_similarity(pred, truth, g);
    c50 += tc >= 0.5;
    c70 += tc >= 0.7;
    c85 += tc >= 0.85;
  }
  h.frac_050 = static_cast<double>(c50) / h.n;
  h.frac_070 = static_cast<double>(c70) / h.n;
  h.frac_085 = static_cast<double>(c85) / h.n;
  return h;
}

std::string to_json(const EvalReport& report) {
  nlohmann::json j;
  j["num_records"] = report.num_records;
  j["basr_threshold"] = report.basr_threshold;
  j["ks"] = report.ks;
  auto metrics_json = [](const KMetrics& m) {
    return nlohmann::json{{"accuracy", m.accuracy},
                          {"fractional_accuracy", m.fractional_accuracy},
                          {"maxfrag_accuracy", m.maxfrag_accuracy},
                          {"maxfrag_basr", m.maxfrag_basr},
                          {"invalid_rate", m.invalid_rate}};
  };
  for (const auto& [k, m] : report.per_k) j["top_k"][std::to_string(k)] = metrics_json(m);
  for (const auto& [cls, per_k] : report.per_class) {
    nlohmann::json cj;
    cj["name"] = reaction_class_name(cls);
    cj["records"] = report.class_counts.at(cls);
    for (const auto& [k, m] : per_k) cj["top_k"][std::to_string(k)] = metrics_json(m);
    j["classes"][std::to_string(cls)] = cj;
  }
  return j.dump(2);
}

}  // namespace gmatt
