#include "dblf/dataset.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "binio.hpp"
#include "dblf/textio.hpp"

namespace dblf {

namespace {

constexpr char kMagic[4] = {'D', 'B', 'T', 'J'};
constexpr std::uint32_t kVersion = 1;

void put_vec(std::ostream& os, const Vec& v) {
    for (double x : v) binio::put_f64(os, x);
}

Vec get_vec(std::istream& is, int n) {
    Vec v(static_cast<std::size_t>(n));
    for (auto& x : v) x = binio::get_f64(is);
    return v;
}

}  // namespace

long Dataset::n_transitions() const {
    long n = 0;
    for (const auto& lt : trajectories) n += lt.traj.length();
    return n;
}

std::pair<Dataset, Dataset> Dataset::split_holdout(double holdout_frac) const {
    Dataset train, hold;
    train.env_id = hold.env_id = env_id;
    train.spec = hold.spec = spec;
    const long total = static_cast<long>(trajectories.size());
    long n_hold = static_cast<long>(std::floor(holdout_frac * static_cast<double>(total)));
    if (holdout_frac > 0.0 && total > 1) n_hold = std::max(1L, n_hold);
    const long n_train = total - n_hold;
    for (long i = 0; i < total; ++i) {
        (i < n_train ? train : hold).trajectories.push_back(trajectories[static_cast<std::size_t>(i)]);
    }
    return {train, hold};
}

Dataset collect_dataset(const Env& env, const std::vector<PolicyMixEntry>& mix, long n_transitions,
                        std::uint64_t seed) {
    if (n_transitions <= 0) throw std::invalid_argument("collect_dataset: n_transitions must be > 0");
    if (mix.empty()) throw std::invalid_argument("collect_dataset: empty policy mix");
    double total_w = 0.0;
    for (const auto& e : mix) {
        if (e.weight < 0) throw std::invalid_argument("collect_dataset: negative mix weight");
        total_w += e.weight;
    }
    if (total_w <= 0) throw std::invalid_argument("collect_dataset: zero total mix weight");

    Dataset ds;
    ds.env_id = env.id();
    ds.spec = env.spec();
    RngStream mix_rng(seed, "mix");
    long remaining = n_transitions;
    long episode = 0;
    while (remaining > 0) {
        double u = mix_rng.uniform() * total_w;
        std::size_t pick = 0;
        for (; pick + 1 < mix.size(); ++pick) {
            if (u < mix[pick].weight) break;
            u -= mix[pick].weight;
        }
        const std::uint64_t ep_seed = mix_seed(seed, static_cast<std::uint64_t>(episode));
        Trajectory traj = rollout(env, mix[pick].policy, env.spec().horizon, ep_seed);
        if (traj.length() > remaining) {
            traj.records.resize(static_cast<std::size_t>(remaining));
            auto& last = traj.records.back();
            if (!last.done) {
                last.done = true;
                last.truncated = true;  // budget cut behaves like a horizon
            }
        }
        remaining -= traj.length();
        ds.trajectories.push_back({mix[pick].label, std::move(traj)});
        ++episode;
    }
    return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write(kMagic, 4);
    binio::put_u32(os, kVersion);
    binio::put_str(os, ds.env_id);
    const EnvSpec& s = ds.spec;
    binio::put_u32(os, static_cast<std::uint32_t>(s.state_dim));
    binio::put_u32(os, static_cast<std::uint32_t>(s.action_dim));
    put_vec(os, s.action_low);
    put_vec(os, s.action_high);
    binio::put_f64(os, s.gamma);
    binio::put_u32(os, static_cast<std::uint32_t>(s.horizon));
    binio::put_f64(os, s.noise_prob);
    binio::put_f64(os, s.noise_scale);
    binio::put_f64(os, s.reward_low);
    binio::put_f64(os, s.reward_high);
    binio::put_u64(os, ds.trajectories.size());
    for (const auto& lt : ds.trajectories) {
        binio::put_u64(os, lt.traj.seed);
        binio::put_str(os, lt.label);
        binio::put_u64(os, lt.traj.records.size());
        for (const auto& r : lt.traj.records) {
            put_vec(os, r.state);
            put_vec(os, r.action);
            binio::put_f64(os, r.reward);
            put_vec(os, r.next_state);
            binio::put_f64(os, r.done ? 1.0 : 0.0);
            binio::put_f64(os, r.truncated ? 1.0 : 0.0);
            binio::put_f64(os, static_cast<double>(r.step_index));
        }
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != std::string(kMagic, 4)) {
        throw std::runtime_error("not a DBTJ dataset: " + path);
    }
    const std::uint32_t version = binio::get_u32(is);
    if (version != kVersion) throw std::runtime_error("unsupported DBTJ version");
    Dataset ds;
    ds.env_id = binio::get_str(is);
    EnvSpec& s = ds.spec;
    s.state_dim = static_cast<int>(binio::get_u32(is));
    s.action_dim = static_cast<int>(binio::get_u32(is));
    s.action_low = get_vec(is, s.action_dim);
    s.action_high = get_vec(is, s.action_dim);
    s.gamma = binio::get_f64(is);
    s.horizon = static_cast<int>(binio::get_u32(is));
    s.noise_prob = binio::get_f64(is);
    s.noise_scale = binio::get_f64(is);
    s.reward_low = binio::get_f64(is);
    s.reward_high = binio::get_f64(is);
    const std::uint64_t n_traj = binio::get_u64(is);
    for (std::uint64_t i = 0; i < n_traj; ++i) {
        LabeledTrajectory lt;
        lt.traj.seed = binio::get_u64(is);
        lt.label = binio::get_str(is);
        const std::uint64_t n_rec = binio::get_u64(is);
        lt.traj.records.reserve(n_rec);
        for (std::uint64_t r = 0; r < n_rec; ++r) {
            Transition tr;
            tr.state = get_vec(is, s.state_dim);
            tr.action = get_vec(is, s.action_dim);
            tr.reward = binio::get_f64(is);
            tr.next_state = get_vec(is, s.state_dim);
            tr.done = binio::get_f64(is) != 0.0;
            tr.truncated = binio::get_f64(is) != 0.0;
            tr.step_index = static_cast<long>(binio::get_f64(is));
            lt.traj.records.push_back(std::move(tr));
        }
        if (!is) throw std::runtime_error("truncated DBTJ file: " + path);
        ds.trajectories.push_back(std::move(lt));
    }
    return ds;
}

void export_jsonl(const std::string& path, const Dataset& ds) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    auto num = [](double v) { return format_double(v); };
    auto arr = [&](const Vec& v) {
        std::string s = "[";
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) s += ",";
            s += num(v[i]);
        }
        return s + "]";
    };
    for (const auto& lt : ds.trajectories) {
        for (const auto& r : lt.traj.records) {
            os << "{\"label\":\"" << lt.label << "\",\"seed\":" << lt.traj.seed
               << ",\"t\":" << r.step_index << ",\"state\":" << arr(r.state)
               << ",\"action\":" << arr(r.action) << ",\"reward\":" << num(r.reward)
               << ",\"next_state\":" << arr(r.next_state) << ",\"done\":" << (r.done ? "true" : "false")
               << ",\"truncated\":" << (r.truncated ? "true" : "false") << "}\n";
        }
    }
}

}  // namespace dblf
