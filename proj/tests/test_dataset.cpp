#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "gmatt/dataset.hpp"

using namespace gmatt;

namespace {

ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.d_model = 32;
  cfg.heads = 4;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.tpe_d = 2;  // L = 16
  cfg.encoder_vocab = build_encoder_vocab().size();
  cfg.decoder_vocab = build_decoder_vocab().size();
  return cfg;
}

}  // namespace

TEST_CASE("vocabularies: pad/unk conventions and closed symbol sets") {
  Vocab enc = build_encoder_vocab();
  Vocab dec = build_decoder_vocab();
  CHECK(enc.id_of(kPadToken) == 0);
  CHECK(enc.id_of(kUnkToken) == 1);
  CHECK(dec.id_of(kPadToken) == 0);
  CHECK(dec.id_of(kStartToken) == 2);
  CHECK(dec.id_of(kEndToken) == 3);
  CHECK(dec.id_of(kDotToken) == 4);
  // Bijection.
  for (int i = 0; i < enc.size(); ++i) CHECK(enc.id_of(enc.symbol(i)) == i);
  for (int i = 0; i < dec.size(); ++i) CHECK(dec.id_of(dec.symbol(i)) == i);
  // Unknown symbols map to <unk>.
  CHECK(enc.id_of("QQ") == Vocab::kUnk);
  CHECK(dec.id_of("[") == Vocab::kUnk);
  // Grammar symbols present on the encoder side; class tokens too.
  CHECK(enc.id_of("CHAIN") > 1);
  CHECK(enc.id_of("Br") > 1);
  CHECK(enc.id_of(rx_token(6)) > 1);
  // Decoder covers the tokenizable terminals.
  CHECK(dec.id_of("Cl") > 4);
  CHECK(dec.id_of("@@") > 4);
}

TEST_CASE("load_reactions: classed line from the attention-map reaction") {
  auto recs = parse_reactions("6\tC=CCCOCC=O.NO>>C=CCCOCC=NO\n", true);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].class_id == 6);
  CHECK(recs[0].product == "C=CCCOCC=NO");
  REQUIRE(recs[0].precursors.size() == 2);
  CHECK(recs[0].precursors[0] == "C=CCCOCC=O");
  CHECK(recs[0].precursors[1] == "NO");
}

TEST_CASE("load_reactions: malformed lines and bad classes") {
  CHECK_THROWS_AS(parse_reactions("CC.O CCO\n", false), MalformedLineError);
  CHECK_THROWS_AS(parse_reactions("11\tCC>>CCO\n", true), BadClassError);
  CHECK_THROWS_AS(parse_reactions("x\tCC>>CCO\n", true), BadClassError);
  CHECK_THROWS_AS(parse_reactions("CC>>\n", false), MalformedLineError);
  CHECK_THROWS_AS(parse_reactions("CC..O>>CCO\n", false), MalformedLineError);
  try {
    parse_reactions("CC>>CCO\nbroken\n", false);
    FAIL("expected MalformedLineError");
  } catch (const MalformedLineError& e) {
    CHECK(e.line_no == 2);
  }
}

TEST_CASE("canonical precursor order: longest first, then lexicographic") {
  CHECK(canonical_precursor_order({"NO", "C=CCCOCC=O"}) ==
        std::vector<std::string>{"C=CCCOCC=O", "NO"});
  CHECK(canonical_precursor_order({"CO", "CC"}) == std::vector<std::string>{"CC", "CO"});
  ReactionRecord r{std::nullopt, "CCO", {"NO", "C=CCCOCC=O"}};
  CHECK(canonical_target_string(r) == "C=CCCOCC=O.NO");
}

TEST_CASE("filter_in_grammar: drops bad elements and long targets") {
  std::vector<ReactionRecord> recs{
      {std::nullopt, "C[Si](C)C", {"CC"}},       // Si not in grammar
      {std::nullopt, "CC=C", {"CC", "C=C"}},     // fine
      {std::nullopt, "CCO", {"C[Zn]C"}},         // precursor out of grammar
  };
  FilterResult fr = filter_in_grammar(recs);
  REQUIRE(fr.kept.size() == 1);
  CHECK(fr.kept[0].product == "CC=C");
  REQUIRE(fr.dropped.size() == 2);
  CHECK(fr.dropped[0].second == "ProductNotInGrammar");
  CHECK(fr.dropped[1].second == "PrecursorNotInGrammar");

  // Target token budget: token count of precursors + dots must fit.
  ReactionRecord long_target{std::nullopt, "CC", {"CCCCCCC", "CCCC"}};
  CHECK(target_token_count(long_target) == 12);
  CHECK(filter_in_grammar({long_target}, 350, 11).kept.empty());
  CHECK(filter_in_grammar({long_target}, 350, 12).kept.size() == 1);

  // Product node budget (350 nodes by default).
  CHECK(filter_in_grammar({{std::nullopt, "CC=C", {"CC"}}}, 17).kept.empty());
  CHECK(filter_in_grammar({{std::nullopt, "CC=C", {"CC"}}}, 18).kept.size() == 1);
}

TEST_CASE("split: sizes, determinism, partition") {
  std::vector<ReactionRecord> recs;
  for (int i = 0; i < 10; ++i)
    recs.push_back({std::nullopt, "C" + std::string(i, 'C'), {"CC"}});
  SplitResult a = split(recs, 0.8, 0.1, 0.1, 99);
  CHECK(a.train.size() == 8);
  CHECK(a.valid.size() == 1);
  CHECK(a.test.size() == 1);
  SplitResult b = split(recs, 0.8, 0.1, 0.1, 99);
  for (std::size_t i = 0; i < a.train.size(); ++i)
    CHECK(a.train[i].product == b.train[i].product);
  CHECK(a.valid[0].product == b.valid[0].product);
  // All records appear exactly once.
  std::map<std::string, int> seen;
  for (const auto* part : {&a.train, &a.valid, &a.test})
    for (const auto& r : *part) seen[r.product]++;
  CHECK(seen.size() == 10);
  for (const auto& [k, v] : seen) CHECK(v == 1);

  CHECK_THROWS_AS(split(recs, 0.5, 0.1, 0.1, 0), DataError);
}

TEST_CASE("split: class proportions roughly preserved on larger corpora") {
  std::vector<ReactionRecord> recs;
  for (int i = 0; i < 1000; ++i)
    recs.push_back({(i % 10) + 1, "CC", {"C"}});
  SplitResult s = split(recs, 0.8, 0.1, 0.1, 7);
  std::map<int, int> train_counts;
  for (const auto& r : s.train) train_counts[*r.class_id]++;
  for (const auto& [cls, cnt] : train_counts)
    CHECK(std::abs(cnt - 80) <= 20);  // statistical check, no stratification guarantee
}

TEST_CASE("target_ids: start/end sentinels around canonical precursors") {
  Vocab dec = build_decoder_vocab();
  ReactionRecord r{std::nullopt, "CCO", {"NO", "C=C"}};
  auto ids = target_ids(r, dec);
  std::vector<std::string> toks;
  for (int id : ids) toks.push_back(dec.symbol(id));
  CHECK(toks == std::vector<std::string>{"<START>", "C", "=", "C", ".", "N", "O", "<END>"});
}

TEST_CASE("encode_product: symbols, wiring and TPE rows") {
  ModelConfig cfg = small_cfg();
  Vocab enc = build_encoder_vocab();
  auto in = encode_product<double>("CC=C", std::nullopt, enc, cfg);
  CHECK(in.size() == 18);
  CHECK(in.symbols[0] == enc.id_of("SMILES"));
  CHECK(in.parent[0] == -1);
  CHECK(in.tpe.rows() == 18);
  CHECK(in.tpe.cols() == 32);
  // Children/parent arrays are mutually consistent.
  for (int i = 0; i < in.size(); ++i)
    for (int c : in.children[i]) CHECK(in.parent[c] == i);

  // With a class id, a virtual zero-path node is prepended.
  auto withc = encode_product<double>("CC=C", 6, enc, cfg);
  CHECK(withc.size() == 19);
  CHECK(withc.symbols[0] == enc.id_of(rx_token(6)));
  CHECK(withc.parent[0] == -1);
  CHECK(withc.children[0].empty());
  CHECK(withc.symbols[1] == enc.id_of("SMILES"));
  CHECK(withc.parent[2] == 1);
  // The virtual token's encoding equals the root's (both zero paths).
  CHECK((withc.tpe.row(0) - withc.tpe.row(1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("make_batch: shapes, masks, padding") {
  ModelConfig cfg = small_cfg();
  Vocab enc = build_encoder_vocab();
  Vocab dec = build_decoder_vocab();
  std::vector<ReactionRecord> recs{
      {1, "CC=C", {"CC", "C=C"}},
      {2, "CCOC", {"CCO", "C"}},
  };
  auto batch = make_batch<double>(recs, enc, dec, cfg, true);
  CHECK(batch.size() == 2);
  CHECK(batch.symbols.rows() == 2);
  CHECK(batch.enc_len[0] == 19);
  CHECK(batch.enc_len[1] == 22);  // CCOC tree (21 nodes) + class token
  CHECK(batch.symbols.cols() == 22);
  for (int r = 0; r < 2; ++r)
    for (int i = 0; i < batch.symbols.cols(); ++i)
      CHECK(batch.mask(r, i) == (i < batch.enc_len[r]));
  // Pad cells carry pad id / -1 parent.
  CHECK(batch.symbols(0, 20) == 0);
  CHECK(batch.parent(0, 20) == -1);
  // Targets padded with 0 beyond dec_len.
  CHECK(batch.dec_len[0] == 8);  // <START> C = C . C C <END>
  CHECK(batch.targets(0, batch.dec_len[0] - 1) == dec.id_of(kEndToken));
  if (batch.targets.cols() > batch.dec_len[0]) CHECK(batch.targets(0, batch.dec_len[0]) == 0);

  // record() slices to true length.
  auto rec0 = batch.record(0);
  CHECK(rec0.size() == 19);
  CHECK(rec0.tpe.rows() == 19);

  // Missing class id raises when with_class is set.
  std::vector<ReactionRecord> no_class{{std::nullopt, "CC", {"C"}}};
  CHECK_THROWS_AS((make_batch<double>(no_class, enc, dec, cfg, true)), MissingClassError);
}

TEST_CASE("make_batches: chunking by batch size") {
  ModelConfig cfg = small_cfg();
  Vocab enc = build_encoder_vocab();
  Vocab dec = build_decoder_vocab();
  std::vector<ReactionRecord> recs(7, ReactionRecord{std::nullopt, "CC", {"C"}});
  auto batches = make_batches<double>(recs, enc, dec, cfg, false, 3);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 3);
  CHECK(batches[2].size() == 1);
}

TEST_CASE("filtered records never exceed batch caps") {
  ModelConfig cfg = small_cfg();
  cfg.max_in = 30;
  cfg.max_out = 10;
  Vocab enc = build_encoder_vocab();
  Vocab dec = build_decoder_vocab();
  std::vector<ReactionRecord> recs{
      {std::nullopt, "CC(C)(C)OC(=O)N", {"CCCC", "CCO"}},
      {std::nullopt, "CC", {"C", "C"}},
      {std::nullopt, "CCO", {"CCCCCCCCCCC"}},
  };
  FilterResult fr = filter_in_grammar(recs, cfg.max_in, cfg.max_out);
  CHECK_NOTHROW((make_batches<double>(fr.kept, enc, dec, cfg, false, 2)));
}

TEST_CASE("reaction_class_name table") {
  CHECK(reaction_class_name(6) == "Deprotections");
  CHECK(reaction_class_name(1) == "Heteroatom alkylation and arylation");
  CHECK_THROWS_AS(reaction_class_name(11), IndexOutOfRangeError);
}
