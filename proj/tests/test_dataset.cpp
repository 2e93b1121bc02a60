#include <doctest.h>

#include <filesystem>

#include "dpets/dataset.hpp"
#include "dpets/errors.hpp"

using namespace dpets;

namespace {

TwoStepTransition transition(double base, long ep)
{
    return {Eigen::Vector2d(base, base + 0.1), Eigen::VectorXd::Constant(1, base / 3.0), Eigen::Vector2d(base + 1.0, -base),
            Eigen::VectorXd::Constant(1, 1.0 / 7.0), Eigen::Vector2d(std::sqrt(2.0), base * 1e-300), ep, ep};
}

} // namespace

TEST_CASE("dataset rejects malformed records")
{
    Dataset d(2, 1);
    auto t = transition(0.5, 1);
    t.second_episode = 2;
    CHECK_THROWS_AS(d.append(t), InputError);
    auto bad = transition(0.5, 1);
    bad.s_mid = Eigen::Vector3d::Zero();
    CHECK_THROWS_AS(d.append(bad), InputError);
    auto nan = transition(0.5, 1);
    nan.a_prev[0] = std::nan("");
    CHECK_THROWS_AS(d.append(nan), InputError);
    CHECK(d.empty());
}

TEST_CASE("dataset CSV round-trips exactly")
{
    const auto dir = std::filesystem::temp_directory_path() / "dpets_dataset_test";
    std::filesystem::create_directories(dir);
    Dataset d(2, 1);
    for (int i = 0; i < 5; ++i)
        d.append(transition(0.1 * i + 1.0 / 3.0, i < 3 ? 0 : 1));
    d.write_csv(dir / "a.csv");
    const auto back = Dataset::read_csv(dir / "a.csv", 2, 1);
    REQUIRE(back.size() == d.size());
    for (std::size_t i = 0; i < d.size(); ++i)
        CHECK(back[i] == d[i]);

    // Incremental appends produce the same file.
    std::filesystem::remove(dir / "b.csv");
    Dataset partial(2, 1);
    for (int i = 0; i < 5; ++i) {
        const auto before = partial.size();
        partial.append(transition(0.1 * i + 1.0 / 3.0, i < 3 ? 0 : 1));
        partial.append_csv(dir / "b.csv", before);
    }
    const auto c = Dataset::read_csv(dir / "b.csv", 2, 1);
    for (std::size_t i = 0; i < d.size(); ++i)
        CHECK(c[i] == d[i]);

    CHECK(d.csv_header()
          == "first_episode,second_episode,s_prev_0,s_prev_1,a_prev_0,s_mid_0,s_mid_1,a_mid_0,s_next_0,s_next_1");
    CHECK_THROWS_AS(Dataset::read_csv(dir / "a.csv", 3, 1), InputError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("gather stacks rows")
{
    Dataset d(2, 1);
    d.append(transition(1.0, 0));
    d.append(transition(2.0, 0));
    const std::vector<std::size_t> idx{1, 0, 1};
    const auto b = d.gather(idx);
    CHECK(b.size() == 3);
    CHECK(b.s_prev(0, 0) == 2.0);
    CHECK(b.s_prev(1, 0) == 1.0);
    d.truncate(1);
    CHECK(d.size() == 1);
}
