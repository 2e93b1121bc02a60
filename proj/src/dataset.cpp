#include "dpets/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dpets/errors.hpp"

namespace dpets {

namespace {

void append_number(std::string& out, double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

void append_vector(std::string& out, const Eigen::VectorXd& v)
{
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        out += ',';
        append_number(out, v[i]);
    }
}

void check_dim(const Eigen::VectorXd& v, int expected, const char* field)
{
    if (v.size() != expected)
        throw InputError(std::string("transition field ") + field + " has dimension " + std::to_string(v.size())
                         + ", expected " + std::to_string(expected));
    if (!v.allFinite())
        throw InputError(std::string("transition field ") + field + " is not finite");
}

} // namespace

Dataset::Dataset(int state_dim, int action_dim) : state_dim_(state_dim), action_dim_(action_dim)
{
    if (state_dim < 1 || action_dim < 0)
        throw ConfigError("dataset dimensions must be positive");
}

void Dataset::append(TwoStepTransition t)
{
    check_dim(t.s_prev, state_dim_, "s_prev");
    check_dim(t.a_prev, action_dim_, "a_prev");
    check_dim(t.s_mid, state_dim_, "s_mid");
    check_dim(t.a_mid, action_dim_, "a_mid");
    check_dim(t.s_next, state_dim_, "s_next");
    if (t.crosses_boundary())
        throw InputError("transition crosses an episode boundary (episodes " + std::to_string(t.first_episode)
                         + " and " + std::to_string(t.second_episode) + ")");
    items_.push_back(std::move(t));
}

void Dataset::truncate(std::size_t n)
{
    if (n < items_.size())
        items_.resize(n);
}

TransitionBatch Dataset::gather(std::span<const std::size_t> indices) const
{
    const auto n = static_cast<Eigen::Index>(indices.size());
    TransitionBatch b;
    b.s_prev.resize(n, state_dim_);
    b.a_prev.resize(n, action_dim_);
    b.s_mid.resize(n, state_dim_);
    b.a_mid.resize(n, action_dim_);
    b.s_next.resize(n, state_dim_);
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto& t = items_.at(indices[static_cast<std::size_t>(r)]);
        b.s_prev.row(r) = t.s_prev.transpose();
        b.a_prev.row(r) = t.a_prev.transpose();
        b.s_mid.row(r) = t.s_mid.transpose();
        b.a_mid.row(r) = t.a_mid.transpose();
        b.s_next.row(r) = t.s_next.transpose();
    }
    return b;
}

TransitionBatch Dataset::all() const
{
    std::vector<std::size_t> idx(items_.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        idx[i] = i;
    return gather(idx);
}

std::string Dataset::csv_header() const
{
    std::string h = "first_episode,second_episode";
    auto cols = [&](const char* prefix, int n) {
        for (int i = 0; i < n; ++i)
            h += std::string(",") + prefix + "_" + std::to_string(i);
    };
    cols("s_prev", state_dim_);
    cols("a_prev", action_dim_);
    cols("s_mid", state_dim_);
    cols("a_mid", action_dim_);
    cols("s_next", state_dim_);
    return h;
}

std::string Dataset::csv_row(const TwoStepTransition& t) const
{
    std::string row = std::to_string(t.first_episode) + "," + std::to_string(t.second_episode);
    append_vector(row, t.s_prev);
    append_vector(row, t.a_prev);
    append_vector(row, t.s_mid);
    append_vector(row, t.a_mid);
    append_vector(row, t.s_next);
    return row;
}

void Dataset::write_csv(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw InputError("cannot write dataset file " + path.string());
    out << csv_header() << '\n';
    for (const auto& t : items_)
        out << csv_row(t) << '\n';
}

void Dataset::append_csv(const std::filesystem::path& path, std::size_t from) const
{
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream out(path, std::ios::app);
    if (!out)
        throw InputError("cannot append to dataset file " + path.string());
    if (fresh)
        out << csv_header() << '\n';
    for (std::size_t i = from; i < items_.size(); ++i)
        out << csv_row(items_[i]) << '\n';
}

Dataset Dataset::read_csv(const std::filesystem::path& path, int state_dim, int action_dim)
{
    std::ifstream in(path);
    if (!in)
        throw InputError("cannot read dataset file " + path.string());
    Dataset ds(state_dim, action_dim);
    std::string line;
    if (!std::getline(in, line) || line != ds.csv_header())
        throw InputError("dataset header in " + path.string() + " does not match the configured dimensions");

    const int n_values = 3 * state_dim + 2 * action_dim;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            cells.push_back(cell);
        if (static_cast<int>(cells.size()) != 2 + n_values)
            throw InputError("dataset line " + std::to_string(line_no) + " has " + std::to_string(cells.size())
                             + " columns");
        TwoStepTransition t;
        t.first_episode = std::stol(cells[0]);
        t.second_episode = std::stol(cells[1]);
        std::size_t k = 2;
        auto take = [&](int n) {
            Eigen::VectorXd v(n);
            for (int i = 0; i < n; ++i)
                v[i] = std::strtod(cells[k++].c_str(), nullptr);
            return v;
        };
        t.s_prev = take(state_dim);
        t.a_prev = take(action_dim);
        t.s_mid = take(state_dim);
        t.a_mid = take(action_dim);
        t.s_next = take(state_dim);
        ds.append(std::move(t));
    }
    return ds;
}

} // namespace dpets
