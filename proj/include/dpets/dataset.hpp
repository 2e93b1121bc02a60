#ifndef DPETS_DATASET_HPP
#define DPETS_DATASET_HPP

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dpets {

// {s_{t-1}, a_{t-1}, s_t, a_t, s_{t+1}} from consecutive steps of one rollout.
// The two episode tags belong to the (t-1, t) and (t, t+1) step pairs.
struct TwoStepTransition {
    Eigen::VectorXd s_prev;
    Eigen::VectorXd a_prev;
    Eigen::VectorXd s_mid;
    Eigen::VectorXd a_mid;
    Eigen::VectorXd s_next;
    long first_episode = 0;
    long second_episode = 0;

    bool crosses_boundary() const { return first_episode != second_episode; }
    bool operator==(const TwoStepTransition&) const = default;
};

// Row-stacked transitions.
struct TransitionBatch {
    Eigen::MatrixXd s_prev, a_prev, s_mid, a_mid, s_next;

    Eigen::Index size() const { return s_prev.rows(); }
};

class Dataset {
public:
    Dataset(int state_dim, int action_dim);

    int state_dim() const { return state_dim_; }
    int action_dim() const { return action_dim_; }
    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }
    const TwoStepTransition& operator[](std::size_t i) const { return items_[i]; }
    const std::vector<TwoStepTransition>& items() const { return items_; }

    // Throws InputError on dimension mismatch or a boundary-crossing record.
    void append(TwoStepTransition t);
    void truncate(std::size_t n);

    TransitionBatch gather(std::span<const std::size_t> indices) const;
    TransitionBatch all() const;

    std::string csv_header() const;
    std::string csv_row(const TwoStepTransition& t) const;

    // Writes all records (header included). Doubles are printed with 17
    // significant digits, so reading back reproduces them exactly.
    void write_csv(const std::filesystem::path& path) const;
    // Appends records [from, size()) to an existing file, writing the header
    // first if the file does not exist.
    void append_csv(const std::filesystem::path& path, std::size_t from) const;
    static Dataset read_csv(const std::filesystem::path& path, int state_dim, int action_dim);

private:
    int state_dim_;
    int action_dim_;
    std::vector<TwoStepTransition> items_;
};

} // namespace dpets

#endif
