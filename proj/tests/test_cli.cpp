#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "lyv5/checkpoint.hpp"
#include "lyv5/train.hpp"

namespace fs = std::filesystem;
using namespace lyv5;

namespace {

struct CliRun {
    int code = -1;
    std::string out;
};

// Runs the CLI with stderr folded into the captured output.
CliRun cli(const std::string& args)
{
    const std::string cmd = std::string(LYV5_CLI_PATH) + " " + args + " 2>&1";
    CliRun r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    std::array<char, 4096> buf{};
    while (auto n = fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> tsv_rows(const std::string& text)
{
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        for (std::string c; std::getline(ls, c, '\t');) cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

// Log text minus the line naming the output directory.
std::string without_paths(const std::string& log)
{
    std::istringstream in(log);
    std::string kept;
    for (std::string line; std::getline(in, line);)
        if (line.rfind("checkpoint ", 0) != 0) kept += line + '\n';
    return kept;
}

// Metric column of a report row, by class label ("0", "1", "mAP50").
double report_value(const std::string& report, const std::string& label, std::size_t column)
{
    for (const auto& row : tsv_rows(report))
        if (!row.empty() && row[0] == label && row.size() > column) return std::stod(row[column]);
    ADD_FAILURE() << "no '" << label << "' row in:\n" << report;
    return -1;
}

// One small synthetic dataset and one short training run, shared by the suite.
class CliFixture : public ::testing::Test {
protected:
    static inline fs::path root;
    static inline fs::path data, run;
    static inline CliRun train;

    static void SetUpTestSuite()
    {
        root = fs::temp_directory_path() / ("lyv5_cli_" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root);
        data = root / "ds";
        run = root / "run";
        cli("synth --n 12 --img 64 --seed 5 --out " + data.string());
        train = cli("train --profile toy --img 64 --batch 4 --epochs 2 --iters 5 --data " + data.string() + " --out "
                    + run.string());
    }
    static void TearDownTestSuite() { fs::remove_all(root); }

    static std::string toy_flags() { return "--profile toy --img 64 --data " + data.string(); }
};

TEST_F(CliFixture, SynthWritesPairsDeterministically)
{
    std::size_t images = 0;
    for (const auto& e : fs::directory_iterator(data / "images")) images += e.path().extension() == ".ppm";
    EXPECT_EQ(images, 12u);
    const auto again = root / "ds_again";
    ASSERT_EQ(cli("synth --n 12 --img 64 --seed 5 --out " + again.string()).code, 0);
    for (const auto& e : fs::directory_iterator(data / "labels"))
        EXPECT_EQ(slurp(e.path()), slurp(again / "labels" / e.path().filename()));
    for (const auto& e : fs::directory_iterator(data / "images"))
        EXPECT_EQ(slurp(e.path()), slurp(again / "images" / e.path().filename()));
}

TEST_F(CliFixture, TrainLogsEpochsAndSavesCheckpoints)
{
    ASSERT_EQ(train.code, 0) << train.out;
    EXPECT_TRUE(fs::exists(run / "best.ckpt"));
    EXPECT_TRUE(fs::exists(run / "last.ckpt"));
    EXPECT_TRUE(fs::exists(data / "split_0.txt"));
    const auto log = slurp(run / "train.log");
    EXPECT_NE(log.find("epoch 1 "), std::string::npos) << log;
    EXPECT_NE(log.find("epoch 2 "), std::string::npos) << log;
    EXPECT_NE(log.find("val_mAP50"), std::string::npos);
    EXPECT_NE(log.find("iterations 5"), std::string::npos) << log;
}

TEST_F(CliFixture, TrainIsDeterministicPerSeed)
{
    const auto again = root / "run_again";
    ASSERT_EQ(cli("train --profile toy --img 64 --batch 4 --epochs 2 --iters 5 --data " + data.string() + " --out "
                  + again.string())
                  .code,
              0);
    EXPECT_EQ(without_paths(slurp(run / "train.log")), without_paths(slurp(again / "train.log")));
    EXPECT_EQ(slurp(run / "last.ckpt"), slurp(again / "last.ckpt"));
}

TEST_F(CliFixture, SavedConfigReproducesTheRun)
{
    TrainConfig cfg;
    apply_config_file(cfg, run / "config.txt");
    EXPECT_EQ(cfg.img, 64u);
    EXPECT_EQ(cfg.batch, 4u);
    EXPECT_EQ(cfg.max_iters, 5u);
    EXPECT_DOUBLE_EQ(cfg.width, TrainConfig::toy().width);
}

TEST_F(CliFixture, EvalPrintsPerClassReport)
{
    const auto r = cli("eval " + toy_flags() + " --split train --weights " + (run / "best.ckpt").string());
    ASSERT_EQ(r.code, 0) << r.out;
    const auto rows = tsv_rows(r.out);
    ASSERT_FALSE(rows.empty());
    EXPECT_EQ(rows.front(), (std::vector<std::string>{"class", "truths", "detections", "AP50", "P", "R", "F1", "conf"}));
    const double m = report_value(r.out, "mAP50", 1);
    EXPECT_GE(m, 0.0);
    EXPECT_LE(m, 1.0);
    EXPECT_EQ(cli("eval " + toy_flags() + " --split train --weights " + (run / "best.ckpt").string()).out, r.out);
}

TEST_F(CliFixture, RandomWeightsScoreNearZero)
{
    auto cfg = TrainConfig::toy();
    cfg.img = 64;
    Detector<float> model(cfg.model_config(), 123);
    const auto path = root / "random.ckpt";
    save_checkpoint(model.named_tensors(), path);
    const auto r = cli("eval " + toy_flags() + " --split train --weights " + path.string());
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_LT(report_value(r.out, "mAP50", 1), 0.05);
}

TEST_F(CliFixture, ClassCountMismatchIsAValidationError)
{
    const auto r = cli("eval " + toy_flags() + " --nc 3 --weights " + (run / "best.ckpt").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("class-count mismatch"), std::string::npos) << r.out;
}

TEST_F(CliFixture, WrongModelCheckpointIsAValidationError)
{
    const auto r = cli("eval " + toy_flags() + " --model baseline --weights " + (run / "best.ckpt").string());
    EXPECT_EQ(r.code, 1) << r.out;
}

TEST_F(CliFixture, CorruptCheckpointIsAValidationError)
{
    const auto bad = root / "bad.ckpt";
    std::ofstream(bad) << "not a checkpoint";
    EXPECT_EQ(cli("eval " + toy_flags() + " --weights " + bad.string()).code, 1);
}

TEST_F(CliFixture, ConfigFileThenFlagsOverrideProfile)
{
    const auto cfg_path = root / "over.cfg";
    std::ofstream(cfg_path) << "# overrides\nlr = 0.5\nbatch = 3\n";
    const auto out = root / "run_cfg";
    const auto r = cli("train --profile toy --img 64 --iters 1 --epochs 1 --config " + cfg_path.string()
                       + " --lr 0.001 --data " + data.string() + " --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.out;
    TrainConfig saved;
    apply_config_file(saved, out / "config.txt");
    EXPECT_DOUBLE_EQ(saved.lr, 0.001);      // flag beats file
    EXPECT_EQ(saved.batch, 3u);             // file beats profile
    EXPECT_EQ(saved.window, TrainConfig::toy().window); // profile beats defaults
}

TEST_F(CliFixture, BenchReportsPositiveFps)
{
    const auto r = cli("bench --profile toy --img 64 --n 3 --runs 2");
    ASSERT_EQ(r.code, 0) << r.out;
    const auto rows = tsv_rows(r.out);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"run", "mean_ms", "p95_ms", "fps"}));
    for (std::size_t i = 1; i < 3; ++i) EXPECT_GT(std::stod(rows[i][3]), 0.0);
}

TEST(Cli, CostTableParsesAndMatchesReferenceBudgets)
{
    const auto r = cli("cost");
    ASSERT_EQ(r.code, 0) << r.out;
    const auto rows = tsv_rows(r.out);
    ASSERT_GT(rows.size(), 3u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"layer", "params", "flops"}));
    std::map<std::string, std::pair<double, double>> named;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        ASSERT_EQ(rows[i].size(), 3u) << "line " << i;
        named[rows[i][0]] = {std::stod(rows[i][1]), std::stod(rows[i][2])};
    }
    EXPECT_NEAR(named["baseline/total"].first, 1.77e6, 0.05 * 1.77e6);
    EXPECT_NEAR(named["light/total"].first, 1.29e6, 0.08 * 1.29e6);
    EXPECT_NEAR(named["baseline/total"].second, 4.2e9, 0.15 * 4.2e9);
    EXPECT_NEAR(named["light/total"].second, 3.4e9, 0.15 * 3.4e9);
    EXPECT_NEAR(named["reduction_pct"].first, 27.1, 3.0);
    EXPECT_NEAR(named["reduction_pct"].second, 19.1, 3.0);
    EXPECT_EQ(cli("cost").out, r.out);
}

TEST(Cli, GradcheckPassesAndNegativeControlFails)
{
    const auto ok = cli("gradcheck");
    EXPECT_EQ(ok.code, 0) << ok.out;
    EXPECT_NE(ok.out.find("sepvit_block"), std::string::npos);
    EXPECT_NE(ok.out.find("training_loss"), std::string::npos);
    const auto bad = cli("gradcheck --inject-fault");
    EXPECT_NE(bad.code, 0);
    EXPECT_NE(bad.out.find("faulty_square\t"), std::string::npos);
    EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}

TEST(Cli, ExitCodes)
{
    EXPECT_EQ(cli("--help").code, 0);
    EXPECT_EQ(cli("").code, 1);
    EXPECT_EQ(cli("frobnicate").code, 1);
    EXPECT_EQ(cli("train --box wiou --data x").code, 1);
    EXPECT_EQ(cli("train --act relu --data x").code, 1);
    EXPECT_EQ(cli("train --profile huge").code, 1);
    EXPECT_EQ(cli("train --config /nonexistent/lyv5.cfg").code, 1);
    EXPECT_EQ(cli("train --data /nonexistent/lyv5_dataset").code, 1);
    EXPECT_EQ(cli("eval --data /nonexistent/lyv5_dataset").code, 1);
    EXPECT_EQ(cli("synth --n 3").code, 1);
}

TEST(Cli, RuntimeFailureExitsTwo)
{
    // Output directory path runs through a regular file.
    const auto dir = fs::temp_directory_path() / ("lyv5_rt_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    std::ofstream(dir / "file") << "x";
    const auto r = cli("synth --n 2 --img 32 --out " + (dir / "file" / "sub").string());
    EXPECT_EQ(r.code, 2) << r.out;
    fs::remove_all(dir);
}

} // namespace
