#include "hctc/harness.hpp"
#include "hctc/records.hpp"
#include "toy.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace hctc;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    return lines;
}

ExperimentConfig tiny_grid(const fs::path& out) {
    ExperimentConfig c = ExperimentConfig::defaults();
    c.out = out.string();
    for (const auto& [k, v] : std::vector<std::pair<std::string, std::string>>{
             {"synth.n_utts", "40"},      {"data.n_test", "8"},         {"data.n_dev", "4"},
             {"model.n_layers", "1"},     {"model.d_model", "16"},      {"teacher.steps", "20"},
             {"targets.k", "8"},          {"pretrain.steps", "10"},     {"pretrain.eval_interval", "5"},
             {"finetune.steps", "20"},    {"finetune.eval_interval", "5"},
             {"grid.methods", "scratch,hubert-ctc"}, {"grid.fractions", "1,0.1"}})
        set_config_value(c, k, v);
    return c;
}

GridCell cell(PretrainMethod m, int d_model, int utts, std::uint64_t seed, double wer) {
    GridCell c;
    c.method = m;
    c.d_model = d_model;
    c.pretrain_utts = utts;
    c.seed = seed;
    c.status = "ok";
    c.wer = wer;
    return c;
}

}  // namespace

TEST_CASE("2x2 grid: summary equals recomputation, rerun is cached") {
    const fs::path out = fs::temp_directory_path() / "hctc_grid_test";
    fs::remove_all(out);
    const ExperimentConfig base = tiny_grid(out);
    Pipeline pipe;
    const GridResult first = run_grid(base, pipe);
    REQUIRE(first.cells.size() == 4);
    for (const auto& c : first.cells) CHECK(c.status == "ok");
    CHECK(!first.records.empty());

    // Summary: one row per method, one column per fraction.
    const auto summary = read_lines(out / "grid" / "summary.csv");
    REQUIRE(summary.size() == 3);
    const auto header = parse_csv_line(summary[0]);
    CHECK(header.back().rfind("wer@", 0) == 0);
    for (std::size_t r = 1; r < summary.size(); ++r) {
        const auto row = parse_csv_line(summary[r]);
        for (std::size_t col = 7; col < header.size(); ++col) {
            const double fraction = std::stod(header[col].substr(4));
            double sum = 0.0;
            int n = 0;
            for (const auto& c : first.cells)
                if (to_string(c.method) == row[0] && c.fraction == fraction) sum += c.wer, ++n;
            REQUIRE(n == 1);
            CHECK(std::stod(row[col]) == sum / n);
        }
    }

    // cells.csv round trip.
    const auto cells = read_cells(out / "grid" / "cells.csv");
    REQUIRE(cells.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(cells[i].hash == first.cells[i].hash);
        CHECK(cells[i].wer == first.cells[i].wer);
    }

    Pipeline fresh;
    const GridResult again = run_grid(base, fresh);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(again.cells[i].status == "cached");
        CHECK(again.cells[i].wer == first.cells[i].wer);
    }
    CHECK(again.records.empty());
    fs::remove_all(out);
}

TEST_CASE("a failing cell is recorded and the grid goes on") {
    const fs::path out = fs::temp_directory_path() / "hctc_grid_fail_test";
    fs::remove_all(out);
    ExperimentConfig base = tiny_grid(out);
    set_config_value(base, "grid.methods", "scratch");
    set_config_value(base, "grid.fractions", "1");
    set_config_value(base, "grid.d_models", "16,15");  // 15 is not divisible by 4 heads
    Pipeline pipe;
    const GridResult r = run_grid(base, pipe);
    REQUIRE(r.cells.size() == 2);
    CHECK(r.cells[0].status == "ok");
    CHECK(r.cells[1].status.rfind("failed: ", 0) == 0);
    fs::remove_all(out);
}

TEST_CASE("plot data: golden headers, header-only when empty, std over seeds") {
    const fs::path dir = fs::temp_directory_path() / "hctc_plots_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    emit_plots_data({}, dir);
    CHECK(read_lines(dir / "wer_vs_data.csv") == std::vector<std::string>{std::string(kWerVsDataHeader)});
    CHECK(read_lines(dir / "wer_vs_model.csv") == std::vector<std::string>{std::string(kWerVsModelHeader)});
    CHECK(kWerVsDataHeader == "method,d_model,pretrain_utts,n,wer_mean,wer_std");
    CHECK(kWerVsModelHeader == "method,d_model,n,wer_mean,wer_std");

    std::vector<GridCell> cells = {cell(PretrainMethod::hubert_ctc, 32, 100, 1, 0.2),
                                   cell(PretrainMethod::hubert_ctc, 32, 100, 2, 0.3),
                                   cell(PretrainMethod::hubert_ctc, 32, 100, 3, 0.4),
                                   cell(PretrainMethod::hubert_ctc, 32, 1000, 1, 0.1)};
    GridCell failed = cell(PretrainMethod::hubert_ctc, 32, 100, 4, 9.0);
    failed.status = "failed: boom";
    cells.push_back(failed);
    emit_plots_data(cells, dir);
    const auto data = read_lines(dir / "wer_vs_data.csv");
    REQUIRE(data.size() == 3);
    const auto row = parse_csv_line(data[1]);
    CHECK(row[0] == "hubert-ctc");
    CHECK(row[2] == "100");
    CHECK(row[3] == "3");
    CHECK(std::stod(row[4]) == doctest::Approx(0.3));
    CHECK(std::stod(row[5]) == doctest::Approx(0.1));
    const auto single = parse_csv_line(data[2]);
    CHECK(std::stod(single[5]) == 0.0);

    const auto model = read_lines(dir / "wer_vs_model.csv");
    REQUIRE(model.size() == 2);
    const auto mrow = parse_csv_line(model[1]);
    CHECK(mrow[2] == "4");
    CHECK(std::stod(mrow[3]) == doctest::Approx(0.25));
    fs::remove_all(dir);
}

TEST_CASE("probing a random encoder: no layer beats the input probe by more than 20%") {
    const Dataset all = hctc::testing::toy_dataset(100, 21);
    const Dataset test(all.begin(), all.begin() + 20);
    const Dataset train(all.begin() + 20, all.end());
    const EncoderModel random_encoder = hctc::testing::toy_encoder(train, 5, 3);
    ProbeConfig pc;
    pc.steps = 150;
    const ProbeResult r = probe_layers(random_encoder, train, test, 8, pc);
    REQUIRE(r.layer_wer.size() == 4);
    for (std::size_t l = 1; l < r.layer_wer.size(); ++l) CHECK(r.layer_wer[l] >= 0.8 * r.layer_wer[0]);
}
