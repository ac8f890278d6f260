#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "togan/image_io.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(TOGAN_CLI) + " " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  std::array<char, 4096> buf{};
  size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Cell i of a one-row grid; cells are framed by 1 px gaps.
togan::Tensor<float> grid_cell(const togan::Tensor<float>& grid, int i, int r) {
  togan::Tensor<float> out(togan::Shape{3, r, r});
  const int64_t w = grid.dim(2);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < r; ++y)
      for (int x = 0; x < r; ++x) out[(c * r + y) * r + x] = grid[(c * grid.dim(1) + 1 + y) * w + 1 + i * (r + 1) + x];
  return out;
}

std::map<std::string, std::string> audit_lines(const std::string& out) {
  std::map<std::string, std::string> m;
  std::regex re(R"(^  ((?:gen|disc)/\S+) (.*)$)");
  std::istringstream in(out);
  std::string line;
  std::smatch sm;
  while (std::getline(in, line))
    if (std::regex_match(line, sm, re)) m[sm[1]] = sm[2];
  return m;
}

const char* kTinyConfig = R"(# toy model for CLI tests
model.channels = 4:8,8:8,16:4
pose.channels = 4:2,8:2,16:2
model.latent_dim = 8
model.mapping_depth = 2
train.batch = 4
train.kimg = 0.5
train.eval_kimg = 0.25
train.checkpoint_kimg = 0.25
train.ema_half_life_kimg = 0.05
eval.fid_samples = 128
)";

class Cli : public ::testing::Test {
 protected:
  static fs::path dir;
  static Result uc_train, pc_train;

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / "togan_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "tiny.cfg") << kTinyConfig;
    ASSERT_EQ(run("make-data --count 64 --res 16 --seed 5 --out " + (dir / "data").string()).code, 0);
    uc_train = run("train --config " + (dir / "tiny.cfg").string() + " --data " + (dir / "data").string() +
                   " --out " + (dir / "uc").string() + " --set model.conditioning=none");
    pc_train = run("train --config " + (dir / "tiny.cfg").string() + " --data " + (dir / "data").string() +
                   " --out " + (dir / "pc").string() + " --set model.conditioning=concat");
  }
  static void TearDownTestSuite() { fs::remove_all(dir); }

  static std::string p(const std::string& name) { return (dir / name).string(); }
};

fs::path Cli::dir;
Result Cli::uc_train, Cli::pc_train;

}  // namespace

TEST_F(Cli, MakeDataIsDeterministicUnderSeed) {
  ASSERT_EQ(run("make-data --count 12 --res 16 --seed 9 --out " + p("a")).code, 0);
  ASSERT_EQ(run("make-data --count 12 --res 16 --seed 9 --out " + p("b")).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "manifest.json"), slurp(dir / "b" / "manifest.json"));
  EXPECT_EQ(slurp(dir / "a" / "keypoints.jsonl"), slurp(dir / "b" / "keypoints.jsonl"));
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a" / "images")) {
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / "images" / e.path().filename()));
    ++files;
  }
  EXPECT_EQ(files, 12);
}

TEST_F(Cli, FaceHeavyManifestIsTagged) {
  auto r = run("make-data --count 6 --res 16 --dist face-heavy --out " + p("face"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("FACE_HEAVY"), std::string::npos);
  const auto manifest = slurp(dir / "face" / "manifest.json");
  EXPECT_NE(manifest.find("face_heavy"), std::string::npos);
  EXPECT_EQ(manifest.find("\"standard\""), std::string::npos);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("make-data --count 4").code, 2);
  EXPECT_EQ(run("make-data --count 4 --res 16 --out " + p("data")).code, 3);
  EXPECT_EQ(run("generate --ckpt " + p("missing") + " --out " + p("g.png")).code, 3);
  EXPECT_FALSE(fs::exists(p("g.png")));
  auto r = run("train --data " + p("data") + " --out " + p("bad") + " --set model.resolution=32");
  EXPECT_EQ(r.code, 3) << r.out;
  EXPECT_EQ(run("train --data " + p("data") + " --out " + p("bad") + " --set no.such_key=1").code, 3);
}

TEST_F(Cli, TinyTrainingRunCompletes) {
  ASSERT_EQ(uc_train.code, 0) << uc_train.out;
  ASSERT_EQ(pc_train.code, 0) << pc_train.out;
  for (const char* run_dir : {"uc", "pc"}) {
    EXPECT_TRUE(fs::exists(dir / run_dir / "final" / "manifest.json"));
    const auto fid = slurp(dir / run_dir / "fid.csv");
    EXPECT_NE(fid.find("252,"), std::string::npos) << fid;
    EXPECT_NE(fid.find("500,"), std::string::npos) << fid;
    EXPECT_EQ(fid.find("nan"), std::string::npos);
    const auto log = slurp(dir / run_dir / "log.csv");
    EXPECT_EQ(log.find("nan"), std::string::npos);
    EXPECT_EQ(log.find("inf"), std::string::npos);
  }
}

TEST_F(Cli, ConcatAuditShowsWidenedChannels) {
  auto uc = audit_lines(uc_train.out), pc = audit_lines(pc_train.out);
  ASSERT_FALSE(uc.empty());
  int widened = 0;
  for (const auto& [name, shape] : uc) {
    auto it = pc.find(name);
    if (it == pc.end() || it->second == shape) continue;
    std::regex dims(R"(\d+)");
    std::vector<int> du, dp;
    for (std::sregex_iterator i(shape.begin(), shape.end(), dims), e; i != e; ++i) du.push_back(std::stoi(i->str()));
    for (std::sregex_iterator i(it->second.begin(), it->second.end(), dims), e; i != e; ++i)
      dp.push_back(std::stoi(i->str()));
    if (du.size() == dp.size() && du.size() >= 2 && dp[1] > du[1]) ++widened;
  }
  EXPECT_GT(widened, 0);
  EXPECT_GT(pc.size(), uc.size());  // pose encoder layers
}

TEST_F(Cli, TransferPrintsMatchedAndFreshCounts) {
  auto r = run("train --config " + p("tiny.cfg") + " --data " + p("data") + " --out " + p("pc_from_uc") +
               " --set model.conditioning=concat --kimg 0.05 --init-mode uc_to_pc --init-from " + p("uc/final"));
  ASSERT_EQ(r.code, 0) << r.out;
  std::smatch m;
  ASSERT_TRUE(std::regex_search(r.out, m, std::regex(R"(init uc_to_pc: matched (\d+), fresh (\d+))"))) << r.out;
  EXPECT_GT(std::stoi(m[1]), 0);
  EXPECT_GT(std::stoi(m[2]), 0);
  EXPECT_EQ(run("train --config " + p("tiny.cfg") + " --data " + p("data") + " --out " + p("uc") +
                " --set model.conditioning=none")
                .code,
            3);
}

TEST_F(Cli, GenerateIsDeterministic) {
  ASSERT_EQ(run("generate --ckpt " + p("pc/final") + " --count 6 --cols 3 --seed 2 --out " + p("g1.png")).code, 0);
  ASSERT_EQ(run("generate --ckpt " + p("pc/final") + " --count 6 --cols 3 --seed 2 --out " + p("g2.png")).code, 0);
  EXPECT_EQ(slurp(p("g1.png")), slurp(p("g2.png")));
  auto g = togan::read_png(p("g1.png"));
  EXPECT_EQ(g.dim(1), 2 * 16 + 3);
  EXPECT_EQ(g.dim(2), 3 * 16 + 4);
}

TEST_F(Cli, InterpolateEndpointsAreReconstructions) {
  const auto a = (dir / "data" / "images" / "000000.png").string(), b = (dir / "data" / "images" / "000001.png").string();
  auto r = run("invert --ckpt " + p("uc/final") + " --steps 20 --images " + a + " --out " + p("a.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  ASSERT_EQ(run("invert --ckpt " + p("uc/final") + " --steps 20 --images " + b + " --out " + p("b.json")).code, 0);
  r = run("interpolate --ckpt " + p("uc/final") + " --image-a " + p("a.json") + " --image-b " + p("b.json") +
          " --steps 4 --out " + p("interp.png"));
  ASSERT_EQ(r.code, 0) << r.out;
  auto grid = togan::read_png(p("interp.png"));
  EXPECT_EQ(grid.dim(2), 5 * 16 + 6);  // 5 cells
  ASSERT_EQ(run("mix --ckpt " + p("uc/final") + " --pose-src " + p("a.json") + " --style-src " + p("a.json") +
                " --k 0 --out " + p("recon_a.png"))
                .code,
            0);
  ASSERT_EQ(run("mix --ckpt " + p("uc/final") + " --pose-src " + p("b.json") + " --style-src " + p("b.json") +
                " --k 0 --out " + p("recon_b.png"))
                .code,
            0);
  auto ra = togan::read_png(p("recon_a.png")), rb = togan::read_png(p("recon_b.png"));
  auto first = grid_cell(grid, 0, 16), last = grid_cell(grid, 4, 16);
  double worst = 0;
  for (int64_t i = 0; i < ra.size(); ++i)
    worst = std::max({worst, static_cast<double>(std::abs(first[i] - ra[i])), static_cast<double>(std::abs(last[i] - rb[i]))});
  EXPECT_LE(worst, 1.0 / 127.5 + 1e-6);  // one 8-bit step
}

TEST_F(Cli, TryOnWithSameSourceIsReconstruction) {
  const auto a = (dir / "data" / "images" / "000002.png").string();
  ASSERT_EQ(run("invert --ckpt " + p("uc/final") + " --steps 10 --images " + a + " --out " + p("c.json")).code, 0);
  auto r = run("try-on --ckpt " + p("uc/final") + " --target " + p("c.json") + " --source " + p("c.json") + " --out " +
               p("t.png") + " --grid " + p("t_grid.png"));
  ASSERT_EQ(r.code, 0) << r.out;
  ASSERT_EQ(run("mix --ckpt " + p("uc/final") + " --pose-src " + p("c.json") + " --style-src " + p("c.json") +
                " --k 0 --out " + p("c_recon.png"))
                .code,
            0);
  EXPECT_EQ(slurp(p("t.png")), slurp(p("c_recon.png")));
  EXPECT_TRUE(fs::exists(p("t_grid.png.txt")));
  EXPECT_EQ(run("try-on --ckpt " + p("pc/final") + " --target " + a + " --source " + a + " --out " + p("t2.png")).code,
            3);
  EXPECT_FALSE(fs::exists(p("t2.png")));
}

TEST_F(Cli, ReportAlignsRunsOnImagesSeen) {
  auto r = run("report --runs " + p("uc") + " " + p("pc") + " --out " + p("report.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream in(slurp(p("report.csv")));
  std::string header, row;
  std::getline(in, header);
  EXPECT_EQ(header, "images_seen,uc,pc");
  int rows = 0;
  while (std::getline(in, row)) {
    EXPECT_EQ(std::count(row.begin(), row.end(), ','), 2) << row;
    ++rows;
  }
  EXPECT_EQ(rows, 2);
}

TEST_F(Cli, FidOfRealAgainstItselfIsZero) {
  auto r = run("fid --real " + p("data") + " --fake " + p("data"));
  ASSERT_EQ(r.code, 0) << r.out;
  std::smatch m;
  ASSERT_TRUE(std::regex_search(r.out, m, std::regex(R"(fid (\S+))")));
  EXPECT_NEAR(std::stod(m[1]), 0.0, 1e-9);
  r = run("fid --real " + p("data") + " --ckpt " + p("uc/final") + " --count 64");
  ASSERT_EQ(r.code, 0) << r.out;
}
