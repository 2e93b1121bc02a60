#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Run {
    int status = -1;
    std::string output;
};

Run cli(const std::string& args, const std::string& env = "")
{
    const auto log = fs::temp_directory_path() / "dpets_cli_output.txt";
    const std::string cmd = env + " \"" DPETS_CLI_PATH "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int raw = std::system(cmd.c_str());
    Run r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    std::ifstream in(log);
    std::ostringstream s;
    s << in.rdbuf();
    r.output = s.str();
    return r;
}

fs::path write_config(const std::string& name, const std::string& text)
{
    const auto p = fs::temp_directory_path() / name;
    std::ofstream(p) << text;
    return p;
}

const char* tiny_run = R"({
  "version": 1, "episodes": 2, "steps": 8, "horizon": 3, "particles": 1,
  "model": {"hidden": [6], "ensemble_size": 2, "mask_sets": 3, "q_subset": 2, "epochs": 1},
  "cem": {"population": 10, "elites": 2, "iterations": 1}
})";

int count_lines(const fs::path& p)
{
    std::ifstream in(p);
    std::string line;
    int n = 0;
    while (std::getline(in, line))
        ++n;
    return n;
}

} // namespace

TEST_CASE("cli exit codes")
{
    const auto good = write_config("dpets_cli_good.json", tiny_run);
    CHECK(cli("validate --config " + good.string()).status == 0);

    const auto unknown = write_config("dpets_cli_unknown.json", R"({"version": 1, "horizn": 3})");
    const auto r = cli("validate --config " + unknown.string());
    CHECK(r.status == 2);
    CHECK(r.output.find("horizn") != std::string::npos);

    const auto bad_q = write_config("dpets_cli_q.json", R"({"version": 1, "model": {"mask_sets": 5, "q_subset": 5}})");
    CHECK(cli("validate --config " + bad_q.string()).status == 2);

    CHECK(cli("validate --config /nonexistent/dpets.json").status == 1);
    CHECK(cli("").status == 2);
    CHECK(cli("run").status == 2);
    CHECK(cli("run --config " + good.string() + " --ablation nope").status == 2);
    // regress needs a regression section
    CHECK(cli("regress --config " + good.string() + " --out /tmp/dpets_cli_none").status == 2);
}

TEST_CASE("cli run, resume and output override")
{
    const auto good = write_config("dpets_cli_good.json", tiny_run);
    const auto out = fs::temp_directory_path() / "dpets_cli_run";
    const auto env_out = fs::temp_directory_path() / "dpets_cli_env";
    fs::remove_all(out);
    fs::remove_all(env_out);

    CHECK(cli("resume --config " + good.string() + " --out " + out.string()).status == 1);

    const auto r = cli("run --config " + good.string() + " --trials 2 --parallel-trials 2 --out " + out.string());
    REQUIRE(r.status == 0);
    CHECK(count_lines(out / "learning_curve.csv") == 1 + 2 * 2);
    CHECK(fs::exists(out / "metadata.json"));
    CHECK(fs::exists(out / "trial_1" / "model_ep2.json"));

    CHECK(cli("resume --config " + good.string() + " --trials 2 --out " + out.string()).status == 0);
    // A checkpoint from another config is refused.
    CHECK(cli("run --config " + good.string() + " --trials 2 --ablation no_fec --out " + out.string()).status == 2);

    CHECK(cli("run --config " + good.string() + " --out " + out.string(), "DPETS_OUT=" + env_out.string()).status
          == 0);
    CHECK(fs::exists(env_out / "learning_curve.csv"));
    fs::remove_all(out);
    fs::remove_all(env_out);
}
