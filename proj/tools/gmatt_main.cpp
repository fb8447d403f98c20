#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "gmatt/decoding.hpp"
#include "gmatt/metrics.hpp"
#include "gmatt/run_config.hpp"
#include "gmatt/training.hpp"

using namespace gmatt;

namespace {

std::ostream& open_or_stdout(std::ofstream& file, const std::string& path) {
  if (path.empty()) return std::cout;
  file.open(path, std::ios::trunc);
  if (!file) throw DataError("cannot write to " + path);
  return file;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// ingest: lenient reader for common reactants>>product text exports.

struct IngestStats {
  int parsed = 0, bad_lines = 0;
};

std::vector<ReactionRecord> ingest_lines(std::istream& in, bool with_class, IngestStats& stats) {
  std::vector<ReactionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    std::string s = line;
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
    if (s.empty()) continue;
    try {
      std::string body = s;
      ReactionRecord rec;
      if (with_class) {
        std::size_t sep = body.find_first_of("\t,");
        if (sep == std::string::npos) throw DataError("no class separator");
        rec.class_id = std::stoi(body.substr(0, sep));
        if (*rec.class_id < 1 || *rec.class_id > 10) throw DataError("class out of range");
        body = body.substr(sep + 1);
      }
      std::size_t arrow = body.find(">>");
      if (arrow == std::string::npos) throw DataError("no '>>'");
      std::string lhs = body.substr(0, arrow);
      std::string rhs = body.substr(arrow + 2);
      auto strip = [](std::string& t) {
        t.erase(0, t.find_first_not_of(" \t"));
        t.erase(t.find_last_not_of(" \t") + 1);
      };
      strip(lhs);
      strip(rhs);
      if (lhs.empty() || rhs.empty()) throw DataError("empty side");
      rec.product = rhs;
      std::size_t at = 0;
      while (at <= lhs.size()) {
        std::size_t dot = lhs.find('.', at);
        std::string part = lhs.substr(at, dot == std::string::npos ? std::string::npos : dot - at);
        strip(part);
        if (part.empty()) throw DataError("empty precursor");
        rec.precursors.push_back(part);
        if (dot == std::string::npos) break;
        at = dot + 1;
      }
      out.push_back(std::move(rec));
      ++stats.parsed;
    } catch (const std::exception&) {
      ++stats.bad_lines;
    }
  }
  return out;
}

void write_corpus(const std::string& path, const std::vector<ReactionRecord>& records) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write to " + path);
  for (const ReactionRecord& r : records) {
    if (r.class_id) f << *r.class_id << '\t';
    for (std::size_t i = 0; i < r.precursors.size(); ++i) {
      if (i) f << '.';
      f << r.precursors[i];
    }
    f << ">>" << r.product << '\n';
  }
}

// ---------------------------------------------------------------------------
// Prediction TSV I/O shared by predict and evaluate.

void write_pred_rows(std::ostream& os, std::optional<int> index,
                     const std::vector<Prediction>& preds) {
  for (const Prediction& p : preds) {
    if (index) os << *index << '\t';
    os << p.rank << '\t' << p.text << '\t' << fmt(p.log_likelihood) << '\t'
       << (p.valid ? 1 : 0) << '\n';
  }
}

std::vector<std::vector<RankedPrediction>> read_pred_tsv(const std::string& path,
                                                         std::size_t num_truths) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open predictions: " + path);
  std::vector<std::vector<RankedPrediction>> out(num_truths);
  std::string line;
  int line_no = 0;
  bool indexed = false;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t at = 0;
    while (at <= line.size()) {
      std::size_t tab = line.find('\t', at);
      cols.push_back(line.substr(at, tab == std::string::npos ? std::string::npos : tab - at));
      if (tab == std::string::npos) break;
      at = tab + 1;
    }
    if (line_no == 1 && !cols.empty() && (cols[0] == "rank" || cols[0] == "index")) {
      indexed = cols[0] == "index";
      continue;  // header row
    }
    if (line_no == 1) indexed = cols.size() >= 5;
    if (cols.size() < (indexed ? 5u : 4u))
      throw MalformedLineError(line_no, "expected TSV prediction row");
    std::size_t idx = indexed ? std::stoul(cols[0]) : 0;
    if (idx >= num_truths) throw MalformedLineError(line_no, "prediction index out of range");
    Prediction p;
    p.text = cols[indexed ? 2 : 1];
    validate_prediction(p);
    out[idx].push_back(RankedPrediction{p.precursors, p.valid});
  }
  return out;
}

// ---------------------------------------------------------------------------

struct TrainCli {
  std::string data, valid, out, config, log;
  std::vector<std::string> sets;
  bool resume = false;
  bool no_filter = false;
  int epochs = -1, batch_size = -1;
  std::int64_t seed = -1;
  bool with_class = false;
  bool with_class_passed = false;
};

void run_train(const TrainCli& cli) {
  Checkpoint<float> ckpt;
  RunConfig rc;
  const bool fresh = !cli.resume;
  if (cli.resume) {
    ckpt = load_checkpoint<float>(cli.out);
    rc.model = ckpt.meta.config;
    rc.sched = ckpt.meta.sched;
    rc.seed = ckpt.meta.seed;
    rc.with_class = ckpt.meta.with_class;
  }
  if (!cli.config.empty()) {
    RunConfig file_cfg = load_run_config(cli.config);
    if (cli.resume) {
      // Model shape comes from the checkpoint; a file may only adjust run knobs.
      file_cfg.model = rc.model;
      file_cfg.with_class = rc.with_class;
      file_cfg.seed = rc.seed;
    }
    rc = file_cfg;
  }
  for (const std::string& kv : cli.sets) {
    std::size_t eq = kv.find('=');
    if (eq == std::string::npos) throw DataError("--set expects key=value, got " + kv);
    apply_setting(rc, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (cli.epochs >= 0) rc.epochs = cli.epochs;
  if (cli.batch_size > 0) rc.batch_size = cli.batch_size;
  if (cli.seed >= 0) rc.seed = static_cast<std::uint64_t>(cli.seed);
  if (cli.with_class_passed) rc.with_class = cli.with_class;

  auto records = load_reactions(cli.data, rc.with_class);
  std::vector<ReactionRecord> valid_records;
  if (!cli.valid.empty()) valid_records = load_reactions(cli.valid, rc.with_class);
  if (!cli.no_filter) {
    FilterResult fr = filter_in_grammar(records, rc.model.max_in, rc.model.max_out);
    if (!fr.dropped.empty())
      std::cerr << "filtered " << fr.dropped.size() << " of " << records.size()
                << " training records (not in grammar or over length caps)\n";
    records = std::move(fr.kept);
    FilterResult fv = filter_in_grammar(valid_records, rc.model.max_in, rc.model.max_out);
    valid_records = std::move(fv.kept);
  }
  if (records.empty()) throw DataError("no usable training records");

  if (fresh) {
    ckpt = make_checkpoint<float>(rc.model, rc.sched, rc.seed, rc.with_class);
  } else {
    ModelConfig expected = rc.model;
    expected.encoder_vocab = ckpt.meta.config.encoder_vocab;
    expected.decoder_vocab = ckpt.meta.config.decoder_vocab;
    check_config_compatible(ckpt.meta, expected);
  }

  TrainOptions opt;
  opt.epochs = rc.epochs;
  opt.batch_size = rc.batch_size;
  opt.sched = rc.sched;
  opt.log_path = cli.log;
  opt.checkpoint_path = cli.out;
  if (ckpt.meta.epochs_completed >= opt.epochs) {
    std::cerr << "checkpoint already has " << ckpt.meta.epochs_completed
              << " epochs; nothing to do\n";
    return;
  }
  TrainResult res = train(ckpt, records, valid_records, opt, &std::cerr);
  if (res.aborted_non_finite)
    throw NonFiniteError("training aborted on non-finite loss; last finished epoch kept");
  std::cerr << "saved checkpoint to " << cli.out << " after " << ckpt.meta.epochs_completed
            << " epochs\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gmatt: grammar-based molecular attention tree transformer"};
  app.require_subcommand(1);

  // grammar dump
  auto* grammar_cmd = app.add_subcommand("grammar", "grammar inspection");
  grammar_cmd->require_subcommand(1);
  auto* dump_cmd = grammar_cmd->add_subcommand("dump", "print the grammar resource");
  dump_cmd->callback([] { std::cout << GrammarSpec::smiles().dump(); });

  // parse
  auto* parse_cmd = app.add_subcommand("parse", "parse a SMILES string into its grammar tree");
  std::string parse_smiles;
  int parse_max_nodes = 350;
  parse_cmd->add_option("--smiles", parse_smiles, "SMILES string")->required();
  parse_cmd->add_option("--max-nodes", parse_max_nodes, "node budget (default 350)");
  parse_cmd->callback([&] {
    GrammarTree tree = parse(parse_smiles);
    if (tree.size() > parse_max_nodes)
      throw DataError("tree has " + std::to_string(tree.size()) + " nodes, over the budget of " +
                      std::to_string(parse_max_nodes));
    print_tree(std::cout, tree);
    std::cout << "nodes: " << tree.size() << "\n";
  });

  // encode
  auto* encode_cmd = app.add_subcommand("encode", "emit node paths and tree positional encodings");
  std::string encode_smiles, encode_format = "csv", encode_out;
  int encode_L = 64, encode_d = 4;
  encode_cmd->add_option("--smiles", encode_smiles, "SMILES string")->required();
  encode_cmd->add_option("--format", encode_format, "output format (csv)");
  encode_cmd->add_option("--L", encode_L, "max path length (default 64)");
  encode_cmd->add_option("--d", encode_d, "per-edge encoding width (default 4)");
  encode_cmd->add_option("--out", encode_out, "output file (default stdout)");
  encode_cmd->callback([&] {
    if (encode_format != "csv") throw DataError("unsupported format: " + encode_format);
    EncodingConfig cfg{encode_L, encode_d};
    cfg.validate();
    const GrammarSpec& g = GrammarSpec::smiles();
    GrammarTree tree = parse(encode_smiles);
    Mat<double> te = encode_tree<double>(tree, cfg);
    std::ofstream file;
    std::ostream& os = open_or_stdout(file, encode_out);
    os << "node,label,path";
    for (int i = 0; i < cfg.d_model(); ++i) os << ",te_" << i;
    os << "\n";
    std::vector<int> order = preorder_nodes(tree);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const TreeNode& node = tree.nodes[order[k]];
      NodePath p = edge_path(tree, order[k], cfg.L);
      os << k << ',' << (tree.is_leaf(order[k]) ? node.text : g.display_name(node.symbol)) << ',';
      for (int l = 0; l < cfg.L; ++l) os << (l ? " " : "") << p.values[l];
      for (int i = 0; i < cfg.d_model(); ++i) os << ',' << fmt(te(k, i));
      os << "\n";
    }
  });

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "convert reactants>>product exports");
  std::string ingest_in, ingest_out, ingest_split;
  bool ingest_with_class = false, ingest_keep_all = false;
  int ingest_max_in = 350, ingest_max_out = 121;
  std::uint64_t ingest_seed = 0;
  ingest_cmd->add_option("--in", ingest_in, "input text export")->required();
  ingest_cmd->add_option("--out", ingest_out, "output corpus path (or prefix with --split)")
      ->required();
  ingest_cmd->add_flag("--with-class", ingest_with_class, "lines carry a leading class field");
  ingest_cmd->add_flag("--keep-all", ingest_keep_all, "skip in-grammar filtering");
  ingest_cmd->add_option("--max-in", ingest_max_in, "product tree node cap (default 350)");
  ingest_cmd->add_option("--max-out", ingest_max_out, "target token cap (default 121)");
  ingest_cmd->add_option("--split", ingest_split, "write train/valid/test (e.g. 0.8,0.1,0.1)");
  ingest_cmd->add_option("--seed", ingest_seed, "split shuffle seed");
  ingest_cmd->callback([&] {
    std::ifstream f(ingest_in);
    if (!f) throw DataError("cannot open " + ingest_in);
    IngestStats stats;
    auto records = ingest_lines(f, ingest_with_class, stats);
    if (records.empty()) throw DataError("no reactions parsed from " + ingest_in);
    std::cerr << "parsed " << stats.parsed << " reactions (" << stats.bad_lines
              << " lines skipped)\n";
    if (!ingest_keep_all) {
      FilterResult fr = filter_in_grammar(records, ingest_max_in, ingest_max_out);
      std::map<std::string, int> by_reason;
      for (const auto& [rec, why] : fr.dropped) by_reason[why]++;
      for (const auto& [why, n] : by_reason) std::cerr << "dropped " << n << ": " << why << "\n";
      std::cerr << "in grammar: " << fr.kept.size() << " of " << records.size() << "\n";
      records = std::move(fr.kept);
    }
    if (ingest_split.empty()) {
      write_corpus(ingest_out, records);
      std::cerr << "wrote " << records.size() << " records to " << ingest_out << "\n";
    } else {
      double tr, va, te;
      if (std::sscanf(ingest_split.c_str(), "%lf,%lf,%lf", &tr, &va, &te) != 3)
        throw DataError("--split expects three comma-separated fractions");
      SplitResult sr = split(records, tr, va, te, ingest_seed);
      write_corpus(ingest_out + ".train.tsv", sr.train);
      write_corpus(ingest_out + ".valid.tsv", sr.valid);
      write_corpus(ingest_out + ".test.tsv", sr.test);
      std::cerr << "split " << records.size() << " -> " << sr.train.size() << "/"
                << sr.valid.size() << "/" << sr.test.size() << "\n";
    }
  });

  // stats
  auto* stats_cmd = app.add_subcommand("stats", "per-class corpus distribution table");
  std::string stats_data, stats_fractions = "0.8,0.1,0.1";
  bool stats_with_class = false;
  std::uint64_t stats_seed = 0;
  stats_cmd->add_option("--data", stats_data, "corpus file")->required();
  stats_cmd->add_flag("--with-class", stats_with_class, "corpus lines carry classes");
  stats_cmd->add_option("--fractions", stats_fractions, "split fractions (default 0.8,0.1,0.1)");
  stats_cmd->add_option("--seed", stats_seed, "split shuffle seed");
  stats_cmd->callback([&] {
    auto records = load_reactions(stats_data, stats_with_class);
    FilterResult fr = filter_in_grammar(records);
    double tr, va, te;
    if (std::sscanf(stats_fractions.c_str(), "%lf,%lf,%lf", &tr, &va, &te) != 3)
      throw DataError("--fractions expects three comma-separated numbers");
    SplitResult sr = split(fr.kept, tr, va, te, stats_seed);
    std::cout << "in grammar: " << fr.kept.size() << " of " << records.size() << " ("
              << fr.dropped.size() << " dropped)\n";
    std::cout << "class\tname\ttrain\tvalid\ttest\ttotal\n";
    auto count = [](const std::vector<ReactionRecord>& rs, int cls) {
      int n = 0;
      for (const auto& r : rs) n += r.class_id.value_or(-1) == cls;
      return n;
    };
    if (stats_with_class) {
      for (int cls = 1; cls <= 10; ++cls) {
        int a = count(sr.train, cls), b = count(sr.valid, cls), c = count(sr.test, cls);
        std::cout << cls << '\t' << reaction_class_name(cls) << '\t' << a << '\t' << b << '\t'
                  << c << '\t' << (a + b + c) << "\n";
      }
    }
    std::cout << "total\t-\t" << sr.train.size() << '\t' << sr.valid.size() << '\t'
              << sr.test.size() << '\t' << fr.kept.size() << "\n";
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "train the tree-to-sequence model");
  TrainCli tc;
  train_cmd->add_option("--data", tc.data, "training corpus")->required();
  train_cmd->add_option("--valid", tc.valid, "validation corpus");
  train_cmd->add_option("--out", tc.out, "checkpoint path")->required();
  train_cmd->add_option("--config", tc.config, "run-config file (key = value lines)");
  train_cmd->add_option("--set", tc.sets, "config override key=value (repeatable)");
  train_cmd->add_option("--log", tc.log, "training log CSV path");
  train_cmd->add_flag("--resume", tc.resume, "continue training the --out checkpoint");
  train_cmd->add_flag("--no-filter", tc.no_filter, "skip in-grammar filtering");
  train_cmd->add_option("--epochs", tc.epochs, "total epoch target");
  train_cmd->add_option("--batch-size", tc.batch_size, "records per Adam step");
  train_cmd->add_option("--seed", tc.seed, "run seed");
  auto* wc = train_cmd->add_flag("--with-class", tc.with_class, "train the known-class model");
  train_cmd->callback([&tc, wc] {
    tc.with_class_passed = wc->count() > 0;
    run_train(tc);
  });

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "beam-search precursor predictions");
  std::string pr_ckpt, pr_smiles, pr_input, pr_out;
  int pr_class = -1, pr_beam = 10;
  bool pr_length_norm = false;
  predict_cmd->add_option("--checkpoint", pr_ckpt, "trained checkpoint")->required();
  predict_cmd->add_option("--smiles", pr_smiles, "single product SMILES");
  predict_cmd->add_option("--input", pr_input, "corpus file; predicts every product");
  predict_cmd->add_option("--class", pr_class, "reaction class 1..10 (known-class models)");
  predict_cmd->add_option("--beam", pr_beam, "beam width B (default 10)");
  predict_cmd->add_flag("--length-norm", pr_length_norm, "rank by length-normalized score");
  predict_cmd->add_option("--out", pr_out, "output TSV (default stdout)");
  predict_cmd->callback([&] {
    if (pr_smiles.empty() == pr_input.empty())
      throw DataError("provide exactly one of --smiles or --input");
    auto ckpt = load_checkpoint<float>(pr_ckpt);
    std::ofstream file;
    std::ostream& os = open_or_stdout(file, pr_out);
    if (!pr_input.empty()) {
      auto records = load_reactions(pr_input, ckpt.meta.with_class);
      os << "index\trank\tprediction\tlog_likelihood\tvalid\n";
      for (std::size_t i = 0; i < records.size(); ++i) {
        std::optional<int> cls = records[i].class_id;
        auto preds = predict<float>(records[i].product, ckpt.meta.with_class ? cls : std::nullopt,
                                    pr_beam, ckpt, pr_length_norm);
        write_pred_rows(os, static_cast<int>(i), preds);
      }
    } else {
      std::optional<int> cls;
      if (pr_class > 0) cls = pr_class;
      auto preds = predict<float>(pr_smiles, cls, pr_beam, ckpt, pr_length_norm);
      os << "rank\tprediction\tlog_likelihood\tvalid\n";
      write_pred_rows(os, std::nullopt, preds);
    }
  });

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "score predictions against a truth corpus");
  std::string ev_preds, ev_truth, ev_k = "1,2,3,5,10", ev_out;
  double ev_basr = 0.85;
  bool ev_with_class = false, ev_histogram = false;
  eval_cmd->add_option("--preds", ev_preds, "prediction TSV from gmatt predict")->required();
  eval_cmd->add_option("--truth", ev_truth, "truth corpus file")->required();
  eval_cmd->add_option("--k", ev_k, "comma-separated top-k list (default 1,2,3,5,10)");
  eval_cmd->add_option("--basr", ev_basr, "bioactive similarity threshold (default 0.85)");
  eval_cmd->add_flag("--with-class", ev_with_class, "truth lines carry classes");
  eval_cmd->add_flag("--histogram", ev_histogram, "add the incorrect-top-1 similarity histogram");
  eval_cmd->add_option("--out", ev_out, "report path (default stdout)");
  eval_cmd->callback([&] {
    auto truths = load_reactions(ev_truth, ev_with_class);
    auto preds = read_pred_tsv(ev_preds, truths.size());
    std::vector<int> ks;
    std::stringstream ss(ev_k);
    std::string part;
    while (std::getline(ss, part, ',')) ks.push_back(std::stoi(part));
    if (ks.empty()) throw DataError("--k must name at least one cutoff");
    EvalReport report = evaluate(preds, truths, ks, ev_basr);
    nlohmann::json j = nlohmann::json::parse(to_json(report));
    if (ev_histogram) {
      std::vector<std::pair<std::string, std::string>> incorrect;
      for (std::size_t i = 0; i < truths.size(); ++i) {
        if (preds[i].empty() || preds[i][0].precursors.empty()) continue;
        std::vector<std::string> a = preds[i][0].precursors;
        std::vector<std::string> b = truths[i].precursors;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        if (a != b)
          incorrect.emplace_back(maxfrag(preds[i][0].precursors), maxfrag(truths[i].precursors));
      }
      SimilarityHistogram h = similarity_histogram(incorrect);
      if (h.n == 0) {
        j["tanimoto_histogram"] = nullptr;
      } else {
        j["tanimoto_histogram"] = {{"n", h.n},
                                   {"tc_ge_0.5", h.frac_050},
                                   {"tc_ge_0.7", h.frac_070},
                                   {"tc_ge_0.85", h.frac_085}};
      }
    }
    std::ofstream file;
    std::ostream& os = open_or_stdout(file, ev_out);
    os << j.dump(2) << "\n";
  });

  // attnmap
  auto* attn_cmd = app.add_subcommand("attnmap", "export the decoder cross-attention map");
  std::string at_ckpt, at_smiles, at_out, at_legend;
  int at_class = -1, at_beam = 10;
  attn_cmd->add_option("--checkpoint", at_ckpt, "trained checkpoint")->required();
  attn_cmd->add_option("--smiles", at_smiles, "product SMILES")->required();
  attn_cmd->add_option("--class", at_class, "reaction class 1..10");
  attn_cmd->add_option("--beam", at_beam, "beam width for the top-1 prediction");
  attn_cmd->add_option("--out", at_out, "attention CSV path")->required();
  attn_cmd->add_option("--legend", at_legend, "row label legend path (default <out>.legend.txt)");
  attn_cmd->callback([&] {
    auto ckpt = load_checkpoint<float>(at_ckpt);
    std::optional<int> cls;
    if (at_class > 0) cls = at_class;
    AttentionMapResult res = attention_map<float>(at_smiles, cls, at_beam, ckpt);
    std::ofstream f(at_out, std::ios::trunc);
    if (!f) throw DataError("cannot write to " + at_out);
    f << "node";
    for (const std::string& c : res.col_labels) f << ',' << c;
    f << "\n";
    for (Eigen::Index r = 0; r < res.map.rows(); ++r) {
      f << res.row_labels[r];
      for (Eigen::Index c = 0; c < res.map.cols(); ++c) f << ',' << fmt(res.map(r, c));
      f << "\n";
    }
    std::string legend_path = at_legend.empty() ? at_out + ".legend.txt" : at_legend;
    std::ofstream lg(legend_path, std::ios::trunc);
    if (!lg) throw DataError("cannot write to " + legend_path);
    for (std::size_t i = 0; i < res.row_labels.size(); ++i)
      lg << i << '\t' << res.row_labels[i] << '\n';
    std::cerr << "top-1: " << res.top1.text << " (log-likelihood " << fmt(res.top1.log_likelihood)
              << ", " << (res.top1.valid ? "valid" : "invalid") << ")\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
