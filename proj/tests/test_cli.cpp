#include <catch2/catch.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "testutil.hpp"
#include "tinytrain/data.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code;
  std::string out;
  std::string err;
};

CmdResult run_cli(const std::string& args, const fs::path& scratch) {
  fs::path out_file = scratch / "stdout.txt";
  fs::path err_file = scratch / "stderr.txt";
  std::string cmd = std::string(TINYTRAIN_CLI_PATH) + " " + args + " > " + out_file.string() +
                    " 2> " + err_file.string();
  int status = std::system(cmd.c_str());
  CmdResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = testutil::slurp(out_file);
  r.err = testutil::slurp(err_file);
  return r;
}

void write_config(const fs::path& path, const fs::path& data_dir, const fs::path& splits,
                  const std::string& extra) {
  std::ofstream f(path);
  f << "{\n"
    << "  \"dataset_dir\": \"" << (data_dir / "images").string() << "\",\n"
    << "  \"manifest\": \"" << (data_dir / "manifest.csv").string() << "\",\n"
    << "  \"splits\": \"" << splits.string() << "\",\n"
    << "  \"sizes\": [16, 32],\n"
    << "  \"epochs_per_stage\": 1,\n"
    << "  \"batch_size\": 25,\n"
    << "  \"seed\": 9,\n"
    << "  \"model\": {\"stem_channels\": 4, \"stage_widths\": [4, 8], \"blocks_per_stage\": 1}"
    << (extra.empty() ? "" : ",\n  " + extra) << "\n}\n";
}

}  // namespace

TEST_CASE("cli synth") {
  testutil::TempDir tmp("cli_synth");

  SECTION("identical flags produce identical datasets; manifest row count matches --n") {
    auto a = run_cli("synth --out " + (tmp.path() / "a").string() + " --n 20 --side 32 --seed 7",
                     tmp.path());
    REQUIRE(a.exit_code == 0);
    auto b = run_cli("synth --out " + (tmp.path() / "b").string() + " --n 20 --side 32 --seed 7",
                     tmp.path());
    REQUIRE(b.exit_code == 0);
    REQUIRE(testutil::slurp(tmp.path() / "a" / "manifest.csv") ==
            testutil::slurp(tmp.path() / "b" / "manifest.csv"));
    REQUIRE(testutil::slurp(tmp.path() / "a" / "images" / "synth_000013.pgm") ==
            testutil::slurp(tmp.path() / "b" / "images" / "synth_000013.pgm"));

    std::string manifest = testutil::slurp(tmp.path() / "a" / "manifest.csv");
    std::size_t rows = 0;
    for (char c : manifest) rows += c == '\n';
    REQUIRE(rows == 21);  // header + 20 records

    // Existing non-empty directory requires --force.
    auto c = run_cli("synth --out " + (tmp.path() / "a").string() + " --n 20 --side 32 --seed 7",
                     tmp.path());
    REQUIRE(c.exit_code == 1);
    REQUIRE(c.err.find("--force") != std::string::npos);
    auto d = run_cli(
        "synth --out " + (tmp.path() / "a").string() + " --n 20 --side 32 --seed 7 --force",
        tmp.path());
    REQUIRE(d.exit_code == 0);
  }

  SECTION("zero noise and zero priors give all No Finding rows") {
    auto r = run_cli("synth --out " + (tmp.path() / "nf").string() +
                         " --n 12 --side 32 --seed 1 --noise 0 --priors 0",
                     tmp.path());
    REQUIRE(r.exit_code == 0);
    auto records = tinytrain::parse_manifest(testutil::slurp(tmp.path() / "nf" / "manifest.csv"));
    REQUIRE(records.size() == 12);
    for (const auto& rec : records) {
      REQUIRE(rec.labels == std::set<std::string>{"No Finding"});
    }
  }
}

TEST_CASE("cli split") {
  testutil::TempDir tmp("cli_split");
  REQUIRE(run_cli("synth --out " + (tmp.path() / "d").string() + " --n 60 --side 32 --seed 2",
                  tmp.path())
              .exit_code == 0);
  std::string manifest = (tmp.path() / "d" / "manifest.csv").string();

  SECTION("patients partition the input set and reruns are identical") {
    auto a = run_cli("split --manifest " + manifest + " --seed 4 --out " +
                         (tmp.path() / "s1.csv").string(),
                     tmp.path());
    REQUIRE(a.exit_code == 0);
    auto b = run_cli("split --manifest " + manifest + " --seed 4 --out " +
                         (tmp.path() / "s2.csv").string(),
                     tmp.path());
    REQUIRE(b.exit_code == 0);
    REQUIRE(testutil::slurp(tmp.path() / "s1.csv") == testutil::slurp(tmp.path() / "s2.csv"));

    auto records = tinytrain::parse_manifest(testutil::slurp(manifest));
    std::set<std::string> patients;
    for (const auto& rec : records) patients.insert(rec.patient_id);
    auto assignment = tinytrain::parse_split_csv(testutil::slurp(tmp.path() / "s1.csv"));
    REQUIRE(assignment.by_patient.size() == patients.size());
    for (const auto& p : patients) REQUIRE(assignment.by_patient.count(p) == 1);
  }

  SECTION("split fractions are fixed; a fraction flag is rejected") {
    auto r = run_cli("split --manifest " + manifest + " --train-frac 0.5 --out " +
                         (tmp.path() / "s.csv").string(),
                     tmp.path());
    REQUIRE(r.exit_code == 1);
  }
}

TEST_CASE("cli train, eval, report") {
  testutil::TempDir tmp("cli_train");
  REQUIRE(run_cli("synth --out " + (tmp.path() / "d").string() + " --n 100 --side 32 --seed 5",
                  tmp.path())
              .exit_code == 0);
  REQUIRE(run_cli("split --manifest " + (tmp.path() / "d" / "manifest.csv").string() +
                      " --seed 5 --out " + (tmp.path() / "splits.csv").string(),
                  tmp.path())
              .exit_code == 0);
  fs::path cfg = tmp.path() / "cfg.json";
  write_config(cfg, tmp.path() / "d", tmp.path() / "splits.csv", "\"lr\": 0.05");

  SECTION("V1 logs exactly one stage and inputs stay untouched") {
    std::string manifest_before = testutil::slurp(tmp.path() / "d" / "manifest.csv");
    std::string splits_before = testutil::slurp(tmp.path() / "splits.csv");
    std::string image_before = testutil::slurp(tmp.path() / "d" / "images" / "synth_000000.pgm");

    auto r = run_cli("train --config " + cfg.string() + " --variant V1 --out " +
                         (tmp.path() / "v1").string(),
                     tmp.path());
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("stage 1/1: side 32") != std::string::npos);
    REQUIRE(r.out.find("stage 2") == std::string::npos);

    REQUIRE(testutil::slurp(tmp.path() / "d" / "manifest.csv") == manifest_before);
    REQUIRE(testutil::slurp(tmp.path() / "splits.csv") == splits_before);
    REQUIRE(testutil::slurp(tmp.path() / "d" / "images" / "synth_000000.pgm") == image_before);
  }

  SECTION("re-running with the echoed config reproduces trace.csv byte-identically") {
    auto a = run_cli("train --config " + cfg.string() + " --out " + (tmp.path() / "r1").string(),
                     tmp.path());
    REQUIRE(a.exit_code == 0);
    auto b = run_cli("train --config " + (tmp.path() / "r1" / "config.json").string() +
                         " --out " + (tmp.path() / "r2").string(),
                     tmp.path());
    REQUIRE(b.exit_code == 0);
    REQUIRE(testutil::slurp(tmp.path() / "r1" / "trace.csv") ==
            testutil::slurp(tmp.path() / "r2" / "trace.csv"));
  }

  SECTION("eval reproduces training metrics, and report renders the table") {
    REQUIRE(run_cli("train --config " + cfg.string() + " --out " + (tmp.path() / "r").string(),
                    tmp.path())
                .exit_code == 0);
    auto e = run_cli("eval --config " + cfg.string() + " --checkpoint " +
                         (tmp.path() / "r" / "checkpoints" / "final.ckpt").string() + " --out " +
                         (tmp.path() / "m.json").string(),
                     tmp.path());
    REQUIRE(e.exit_code == 0);
    REQUIRE(testutil::slurp(tmp.path() / "m.json") ==
            testutil::slurp(tmp.path() / "r" / "metrics.json"));

    auto rep = run_cli("report --metrics " + (tmp.path() / "m.json").string() + " --names Proposed",
                       tmp.path());
    REQUIRE(rep.exit_code == 0);
    REQUIRE(rep.out.find("Pathology") != std::string::npos);
    REQUIRE(rep.out.find("No Finding") != std::string::npos);
    std::size_t lines = 0;
    for (char c : rep.out) lines += c == '\n';
    REQUIRE(lines == 16);  // header + 15 class rows
  }

  SECTION("divergence exits with code 2") {
    fs::path bad = tmp.path() / "bad.json";
    write_config(bad, tmp.path() / "d", tmp.path() / "splits.csv",
                 "\"lr\": 1e9, \"weight_decay\": 1e200, \"variant\": \"V2\"");
    auto r = run_cli("train --config " + bad.string() + " --out " + (tmp.path() / "bd").string(),
                     tmp.path());
    REQUIRE(r.exit_code == 2);
    REQUIRE(r.err.find("error") != std::string::npos);
  }

  SECTION("unknown config keys are rejected") {
    fs::path bad = tmp.path() / "unknown.json";
    write_config(bad, tmp.path() / "d", tmp.path() / "splits.csv", "\"learning_rate\": 0.1");
    auto r = run_cli("train --config " + bad.string(), tmp.path());
    REQUIRE(r.exit_code == 1);
    REQUIRE(r.err.find("learning_rate") != std::string::npos);
  }

  SECTION("lr-find writes the sweep artifacts") {
    fs::path auto_cfg = tmp.path() / "auto.json";
    write_config(auto_cfg, tmp.path() / "d", tmp.path() / "splits.csv",
                 "\"lr\": \"auto\", \"lr_finder\": {\"lr_end\": 1.0}");
    auto r = run_cli("lr-find --config " + auto_cfg.string() + " --out " +
                         (tmp.path() / "lrf").string(),
                     tmp.path());
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("selected lr") != std::string::npos);
    REQUIRE(fs::exists(tmp.path() / "lrf" / "sweep.csv"));
    REQUIRE(fs::exists(tmp.path() / "lrf" / "sweep.svg"));
  }
}
