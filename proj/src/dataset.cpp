#include "gmatt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace gmatt {

void Vocab::add(const std::string& s) {
  if (ids.count(s)) throw RuntimeError("duplicate vocabulary symbol: " + s);
  ids[s] = static_cast<int>(symbols.size());
  symbols.push_back(s);
}

Vocab Vocab::from_symbols(const std::vector<std::string>& symbols) {
  Vocab v;
  for (const std::string& s : symbols) v.add(s);
  if (v.size() < 2 || v.symbols[kPad] != kPadToken || v.symbols[kUnk] != kUnkToken)
    throw DataError("vocabulary must start with <pad>, <unk>");
  return v;
}

Vocab build_encoder_vocab(const GrammarSpec& g) {
  Vocab v;
  v.add(kPadToken);
  v.add(kUnkToken);
  for (int k = 1; k <= 10; ++k) v.add(rx_token(k));
  for (SymbolId s = 0; s < g.num_symbols(); ++s) v.add(g.name(s));
  return v;
}

Vocab build_decoder_vocab(const GrammarSpec& g) {
  Vocab v;
  v.add(kPadToken);
  v.add(kUnkToken);
  v.add(kStartToken);
  v.add(kEndToken);
  v.add(kDotToken);
  for (SymbolId s : g.lexable_terminals()) v.add(g.name(s));
  return v;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t at = 0;
  while (true) {
    std::size_t next = s.find(sep, at);
    out.push_back(s.substr(at, next - at));
    if (next == std::string::npos) break;
    at = next + 1;
  }
  return out;
}

}  // namespace

std::vector<ReactionRecord> parse_reactions(const std::string& text, bool with_class) {
  std::vector<ReactionRecord> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = trim(line);
    if (s.empty()) continue;
    ReactionRecord rec;
    if (with_class) {
      std::size_t tab = s.find('\t');
      if (tab == std::string::npos)
        throw MalformedLineError(line_no, "expected class<TAB>reaction");
      std::string cls = trim(s.substr(0, tab));
      try {
        std::size_t used = 0;
        int c = std::stoi(cls, &used);
        if (used != cls.size()) throw std::invalid_argument("trailing junk");
        if (c < 1 || c > 10) throw BadClassError(line_no);
        rec.class_id = c;
      } catch (const BadClassError&) {
        throw;
      } catch (const std::exception&) {
        throw BadClassError(line_no);
      }
      s = trim(s.substr(tab + 1));
    } else if (s.find('\t') != std::string::npos) {
      throw MalformedLineError(line_no, "unexpected TAB; use --with-class for classed corpora");
    }
    std::size_t arrow = s.find(">>");
    if (arrow == std::string::npos) throw MalformedLineError(line_no, "missing '>>'");
    std::string lhs = trim(s.substr(0, arrow));
    rec.product = trim(s.substr(arrow + 2));
    if (lhs.empty() || rec.product.empty())
      throw MalformedLineError(line_no, "empty precursor or product side");
    for (const std::string& p : split_on(lhs, '.')) {
      std::string t = trim(p);
      if (t.empty()) throw MalformedLineError(line_no, "empty precursor between dots");
      rec.precursors.push_back(t);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<ReactionRecord> load_reactions(const std::string& path, bool with_class) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open reaction file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_reactions(buf.str(), with_class);
}

std::vector<std::string> canonical_precursor_order(std::vector<std::string> precursors) {
  std::sort(precursors.begin(), precursors.end(), [](const std::string& a, const std::string& b) {
    if (a.size() != b.size()) return a.size() > b.size();
    return a < b;
  });
  return precursors;
}

std::string canonical_target_string(const ReactionRecord& record) {
  std::string out;
  for (const std::string& p : canonical_precursor_order(record.precursors)) {
    if (!out.empty()) out += '.';
    out += p;
  }
  return out;
}

int target_token_count(const ReactionRecord& record, const GrammarSpec& g) {
  int n = static_cast<int>(record.precursors.size()) - 1;  // separator dots
  for (const std::string& p : record.precursors) n += static_cast<int>(tokenize(p, g).size());
  return n;
}

FilterResult filter_in_grammar(const std::vector<ReactionRecord>& records, int max_in,
                               int max_out, const GrammarSpec& g) {
  FilterResult res;
  for (const ReactionRecord& r : records) {
    std::string reason;
    if (r.precursors.empty()) {
      reason = "NoPrecursors";
    } else if (!is_in_grammar(r.product, max_in, g)) {
      reason = "ProductNotInGrammar";
    } else {
      for (const std::string& p : r.precursors) {
        if (!is_in_grammar(p, std::numeric_limits<int>::max(), g)) {
          reason = "PrecursorNotInGrammar";
          break;
        }
      }
      if (reason.empty() && target_token_count(r, g) > max_out) reason = "TargetTooLong";
    }
    if (reason.empty())
      res.kept.push_back(r);
    else
      res.dropped.emplace_back(r, reason);
  }
  return res;
}

SplitResult split(const std::vector<ReactionRecord>& records, double train_frac,
                  double valid_frac, double test_frac, std::uint64_t seed) {
  if (std::abs(train_frac + valid_frac + test_frac - 1.0) > 1e-9)
    throw DataError("split fractions must sum to 1");
  std::vector<std::size_t> idx(records.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);

  const auto n = static_cast<double>(records.size());
  const std::size_t end_train = static_cast<std::size_t>(std::llround(n * train_frac));
  const std::size_t end_valid =
      static_cast<std::size_t>(std::llround(n * (train_frac + valid_frac)));
  SplitResult out;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (i < end_train)
      out.train.push_back(records[idx[i]]);
    else if (i < end_valid)
      out.valid.push_back(records[idx[i]]);
    else
      out.test.push_back(records[idx[i]]);
  }
  return out;
}

const std::string& reaction_class_name(int class_id) {
  static const std::vector<std::string> names = {
      "Heteroatom alkylation and arylation",
      "Acylation and related processes",
      "C-C bond formation",
      "Heterocycle formation",
      "Protections",
      "Deprotections",
      "Reductions",
      "Oxidations",
      "Functional group interconversion (FGI)",
      "Functional group addition (FGA)",
  };
  if (class_id < 1 || class_id > 10) throw IndexOutOfRangeError("reaction class must be 1..10");
  return names[class_id - 1];
}

std::vector<int> target_ids(const ReactionRecord& record, const Vocab& dec_vocab,
                            const GrammarSpec& g) {
  std::vector<int> ids{dec_vocab.id_of(kStartToken)};
  bool first = true;
  for (const std::string& p : canonical_precursor_order(record.precursors)) {
    if (!first) ids.push_back(dec_vocab.id_of(kDotToken));
    first = false;
    for (const Token& t : tokenize(p, g)) ids.push_back(dec_vocab.id_of(t.text));
  }
  ids.push_back(dec_vocab.id_of(kEndToken));
  return ids;
}

}  // namespace gmatt
