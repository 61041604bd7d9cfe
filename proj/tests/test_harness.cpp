#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "grutv/errors.hpp"
#include "grutv/experiment.hpp"
#include "grutv/synth.hpp"

using namespace grutv;
namespace fs = std::filesystem;

TEST_CASE("gen_synth honors zero missing-rate targets") {
  SynthConfig cfg;
  cfg.sequences = 20;
  cfg.missing_lo = 0.0;
  cfg.missing_hi = 0.0;
  cfg.seed = 8;
  SynthResult res = gen_synth(cfg);
  for (const Sequence& seq : res.corpus.seqs) {
    CHECK(seq.mask.sum() == static_cast<double>(seq.mask.size()));
  }
}

TEST_CASE("gen_synth writes one jsonl line per sequence plus a header") {
  SynthConfig cfg;
  cfg.sequences = 10;
  cfg.seed = 4;
  SynthResult res = gen_synth(cfg);
  CHECK(res.corpus.seqs.size() == 10);

  const fs::path path = fs::temp_directory_path() / "grutv_synth_count.jsonl";
  save_jsonl(res.corpus, path);
  std::ifstream in(path);
  long lines = 0;
  std::string line;
  while (std::getline(in, line)) ++lines;
  fs::remove(path);
  CHECK(lines == 11);  // header + 10 sequences
}

TEST_CASE("gen_synth hits its missing-rate targets on 2000 sequences") {
  SynthConfig cfg;
  cfg.sequences = 2000;
  cfg.seed = 42;
  SynthResult res = gen_synth(cfg);
  CorpusStats stats = corpus_stats(res.corpus, 1.0);
  for (Index d = 0; d < cfg.vars; ++d) {
    CHECK(std::abs(stats.missing_rate_mean[static_cast<std::size_t>(d)] -
                   res.missing_targets[d]) <= 0.02);
  }
}

TEST_CASE("gen_synth labels are non-degenerate") {
  SynthConfig cfg;
  cfg.sequences = 2000;
  cfg.seed = 42;
  SynthResult res = gen_synth(cfg);
  for (Index k = 0; k < cfg.tasks; ++k) {
    long pos = 0;
    for (const Sequence& seq : res.corpus.seqs) pos += seq.labels[static_cast<std::size_t>(k)];
    const double rate = static_cast<double>(pos) / static_cast<double>(res.corpus.seqs.size());
    CHECK(rate >= 0.2);
    CHECK(rate <= 0.8);
  }
}

TEST_CASE("gen_synth is seed-deterministic") {
  SynthConfig cfg;
  cfg.sequences = 15;
  cfg.seed = 77;
  SynthResult a = gen_synth(cfg);
  SynthResult b = gen_synth(cfg);
  REQUIRE(a.corpus.seqs.size() == b.corpus.seqs.size());
  for (std::size_t s = 0; s < a.corpus.seqs.size(); ++s) {
    CHECK(a.corpus.seqs[s].t == b.corpus.seqs[s].t);
    CHECK(a.corpus.seqs[s].mask == b.corpus.seqs[s].mask);
    CHECK(a.corpus.seqs[s].labels == b.corpus.seqs[s].labels);
    // values: NaN-masked entries compare via the mask, observed ones directly
    for (Index i = 0; i < a.corpus.seqs[s].length(); ++i) {
      for (Index d = 0; d < a.corpus.seqs[s].values.cols(); ++d) {
        if (a.corpus.seqs[s].mask(i, d) != 0.0) {
          CHECK(a.corpus.seqs[s].values(i, d) == b.corpus.seqs[s].values(i, d));
        }
      }
    }
  }
}

namespace {

ExperimentSpec tiny_spec() {
  ExperimentSpec spec;
  spec.variants = {CellVariant::gru, CellVariant::gru_tv};
  spec.conditions = {{1.0, SampleMode::uniform}, {0.5, SampleMode::uniform}};
  spec.seeds = 1;
  spec.base_seed = 3;
  spec.train.hidden_dim = 3;
  spec.train.min_epochs = 1;
  spec.train.patience = 1;
  spec.train.max_epochs = 3;
  spec.jobs = 2;
  return spec;
}

}  // namespace

TEST_CASE("run_experiment fills a finite grid and is reproducible") {
  SynthConfig cfg;
  cfg.sequences = 80;
  cfg.mean_records = 10;
  cfg.seed = 5;
  SynthResult sr = gen_synth(cfg);

  ExperimentSpec spec = tiny_spec();
  ExperimentResult a = run_experiment(spec, sr.corpus);
  ExperimentResult b = run_experiment(spec, sr.corpus);

  REQUIRE(a.cells.size() == 4);
  for (const GridCell& c : a.cells) {
    CHECK_FALSE(c.failed);
    REQUIRE(c.runs.size() == 1);
    CHECK(c.mean_macro_auroc.has_value());
    CHECK(*c.mean_macro_auroc >= 0.0);
    CHECK(*c.mean_macro_auroc <= 1.0);
    for (const auto& v : c.mean_task_auroc) {
      REQUIRE(v.has_value());
      CHECK(*v >= 0.0);
      CHECK(*v <= 1.0);
    }
  }
  CHECK(a.to_json() == b.to_json());  // byte-identical grids
  CHECK(a.to_text() == b.to_text());
}

TEST_CASE("failed grid cells are explicit and the runner continues") {
  // 5 sequences cannot produce a validation split at the default fractions
  SynthConfig cfg;
  cfg.sequences = 5;
  cfg.mean_records = 6;
  cfg.seed = 2;
  SynthResult sr = gen_synth(cfg);

  ExperimentSpec spec = tiny_spec();
  spec.variants = {CellVariant::gru};
  spec.conditions = {{1.0, SampleMode::uniform}};
  ExperimentResult res = run_experiment(spec, sr.corpus);
  REQUIRE(res.cells.size() == 1);
  CHECK(res.cells[0].failed);
  REQUIRE(res.cells[0].runs.size() == 1);
  CHECK(res.cells[0].runs[0].failed);
  CHECK_FALSE(res.cells[0].runs[0].error.empty());
  // the failure is visible in the serialized grid too
  CHECK(res.to_json().find("\"failed\": true") != std::string::npos);
}

TEST_CASE("experiment spec json round trip") {
  ExperimentSpec spec = tiny_spec();
  spec.corpus_path = "corpus.jsonl";
  ExperimentSpec back = ExperimentSpec::from_json(spec.to_json());
  CHECK(back.corpus_path == "corpus.jsonl");
  CHECK(back.variants == spec.variants);
  CHECK(back.seeds == spec.seeds);
  CHECK(back.conditions.size() == 2);
  CHECK(back.conditions[1].rate == 0.5);
  CHECK(back.train.hidden_dim == 3);

  CHECK_THROWS_AS(ExperimentSpec::from_json("{\"variants\": []}"), UsageError);
  CHECK_THROWS_AS(ExperimentSpec::from_json("not json"), ParseError);
}
