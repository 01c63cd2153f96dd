#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "hctc_cli_test";
const std::string kSmall =
    " --set model.n_layers=1 --set model.d_model=16 --set targets.k=8 --set pretrain.steps=6"
    " --set pretrain.eval_interval=3 --set finetune.steps=10 --set finetune.eval_interval=5 --set probe.steps=5";

int run(const std::string& args) {
    const std::string cmd = std::string(HCTC_CLI) + " " + args + " > " + (kWork / "last.log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_output() {
    std::ifstream in(kWork / "last.log");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string p(const std::string& rel) { return (kWork / rel).string(); }

}  // namespace

TEST_CASE("end-to-end command line run and exit codes") {
    fs::remove_all(kWork);
    fs::create_directories(kWork);

    CHECK(run("--help") == 0);
    CHECK(run("") == 1);
    CHECK(run("nonsense") == 1);

    REQUIRE(run("--seed 3 --out " + p("corpus") + " synth --n 30 --silence-mix 0.3") == 0);
    REQUIRE(fs::exists(kWork / "corpus" / "manifest.tsv"));

    REQUIRE(run("--out " + p("filtered") + " filter --manifest " + p("corpus/manifest.tsv")) == 0);
    CHECK(fs::exists(kWork / "filtered" / "report.csv"));
    CHECK(last_output().find("kept_fraction=") != std::string::npos);

    const std::string data = " --manifest " + p("corpus/manifest.tsv");
    CHECK(run("--out " + p("t_missing") + kSmall + " targets --method hubert-ctc --teacher " + p("nope") + data) == 1);
    CHECK(last_output().find("teacher checkpoint not found") != std::string::npos);

    REQUIRE(run("--out " + p("teacher") + kSmall + " finetune --init scratch" + data) == 0);
    CHECK(fs::exists(kWork / "teacher" / "model.bin"));
    CHECK(fs::exists(kWork / "teacher" / "metrics.csv"));

    REQUIRE(run("--out " + p("targets") + kSmall + " targets --method hubert-ctc --teacher " + p("teacher") + data) == 0);
    REQUIRE(fs::exists(kWork / "targets" / "targets.tsv"));
    REQUIRE(run("--out " + p("brq") + kSmall + " targets --method bestrq" + data) == 0);

    REQUIRE(run("--out " + p("pre") + kSmall + " pretrain --targets " + p("targets/targets.tsv") + data) == 0);
    std::ifstream metrics(kWork / "pre" / "metrics.csv");
    std::string header;
    std::getline(metrics, header);
    CHECK(header == "step,loss,masked_acc,chunk_size");

    REQUIRE(run("--out " + p("ft") + kSmall + " finetune --init " + p("pre") +
                " --fraction 0.1 --chunk 1s --conv chunkwise-causal" + data) == 0);
    CHECK(last_output().find("WER ") != std::string::npos);

    REQUIRE(run("--out " + p("probe") + kSmall + " probe --model " + p("pre") + data) == 0);
    CHECK(fs::exists(kWork / "probe" / "probe.csv"));

    CHECK(run("--out " + p("x") + kSmall + " finetune --fraction 0.3" + data) == 1);
    CHECK(run("--out " + p("x") + " --set model.depth=3 finetune" + data) == 1);
    CHECK(last_output().find("unknown config key 'model.depth'") != std::string::npos);
    CHECK(run("--out " + p("x") + kSmall + " finetune --manifest " + p("missing.tsv")) == 1);

    CHECK(run("--out " + p("div") + kSmall + " --set finetune.lr=1e300 --set finetune.weight_decay=0 finetune" + data) ==
          2);
    CHECK(last_output().find("numerical divergence") != std::string::npos);

    fs::remove_all(kWork);
}

TEST_CASE("grid and report subcommands") {
    const fs::path dir = fs::temp_directory_path() / "hctc_cli_grid";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "grid.conf") << "synth.n_utts = 30\ndata.n_test = 6\ndata.n_dev = 3\nmodel.n_layers = 1\n"
                                        "model.d_model = 16\nfinetune.steps = 10\nfinetune.eval_interval = 5\n"
                                        "grid.methods = scratch\ngrid.fractions = 1,0.1\n";
    fs::create_directories(kWork);
    const std::string common = "--config " + (dir / "grid.conf").string() + " --out " + (dir / "out").string();
    REQUIRE(run(common + " grid") == 0);
    CHECK(last_output().find("wer@") != std::string::npos);
    fs::remove(dir / "out" / "grid" / "summary.csv");
    REQUIRE(run(common + " report") == 0);
    CHECK(fs::exists(dir / "out" / "grid" / "summary.csv"));
    CHECK(fs::exists(dir / "out" / "grid" / "wer_vs_data.csv"));
    REQUIRE(run(common + " grid") == 0);
    CHECK(last_output().find("cached") != std::string::npos);
    fs::remove_all(dir);
    fs::remove_all(kWork);
}
