#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dblf/belief.hpp"
#include "dblf/cli.hpp"
#include "dblf/gradcheck.hpp"
#include "dblf/sac.hpp"
#include "dblf/theory.hpp"

namespace py = pybind11;
using namespace dblf;

namespace {

// Thin adapter: lists in, lists out. The heavy lifting stays in the core.
ArrayPtr make_array(const std::vector<int>& shape, const std::vector<double>& values,
                    bool requires_grad) {
    return DArray::from(shape, values, requires_grad);
}

}  // namespace

PYBIND11_MODULE(_dblf, m) {
    m.doc() = "delayed-RL toolkit: belief forecasting, delayed SAC and bound verification";

    py::class_<RngStream>(m, "RngStream")
        .def(py::init<std::uint64_t, std::string_view>(), py::arg("seed"), py::arg("name"))
        .def("uniform", &RngStream::uniform)
        .def("normal", &RngStream::normal)
        .def("uniform_int", &RngStream::uniform_int);

    py::class_<DArray, ArrayPtr>(m, "Array")
        .def(py::init(&make_array), py::arg("shape"), py::arg("values"),
             py::arg("requires_grad") = false)
        .def_readonly("shape", &DArray::shape)
        .def_readonly("data", &DArray::data)
        .def_readonly("grad", &DArray::grad)
        .def_property_readonly("requires_grad", [](const DArray& a) { return a.requires_grad; });

    py::class_<Tape>(m, "Tape")
        .def(py::init<>())
        .def("backward", [](Tape& t, const ArrayPtr& loss) { t.backward(loss); })
        .def("size", &Tape::size);

    m.def("matmul", &ops::matmul);
    m.def("add", &ops::add);
    m.def("mul", &ops::mul);
    m.def("relu", &ops::relu);
    m.def("tanh", &ops::tanh);
    m.def("softmax", &ops::softmax, py::arg("tape"), py::arg("x"), py::arg("axis") = -1);
    m.def("layer_norm", &ops::layer_norm, py::arg("tape"), py::arg("x"), py::arg("gain"),
          py::arg("bias"), py::arg("eps") = 1e-5);
    m.def("sum", &ops::sum);
    m.def("mean", &ops::mean);

    py::class_<EnvSpec>(m, "EnvSpec")
        .def_readonly("state_dim", &EnvSpec::state_dim)
        .def_readonly("action_dim", &EnvSpec::action_dim)
        .def_readonly("action_low", &EnvSpec::action_low)
        .def_readonly("action_high", &EnvSpec::action_high)
        .def_readonly("gamma", &EnvSpec::gamma)
        .def_readonly("horizon", &EnvSpec::horizon)
        .def_readonly("reward_low", &EnvSpec::reward_low)
        .def_readonly("reward_high", &EnvSpec::reward_high);

    py::class_<Transition>(m, "Transition")
        .def_readonly("state", &Transition::state)
        .def_readonly("action", &Transition::action)
        .def_readonly("reward", &Transition::reward)
        .def_readonly("next_state", &Transition::next_state)
        .def_readonly("done", &Transition::done)
        .def_readonly("truncated", &Transition::truncated);

    py::class_<Trajectory>(m, "Trajectory")
        .def_readonly("seed", &Trajectory::seed)
        .def_readonly("records", &Trajectory::records)
        .def("__len__", &Trajectory::length);

    py::class_<Env, std::shared_ptr<Env>>(m, "Env")
        .def_property_readonly("spec", &Env::spec)
        .def_property_readonly("id", &Env::id);

    m.def("make_env", [](const std::string& id) { return make_env(id); });
    m.def("env_reset",
          [](const std::shared_ptr<Env>& env, std::uint64_t seed) { return env_reset(*env, seed); });
    m.def("env_step",
          [](const std::shared_ptr<Env>& env, const Vec& s, const Vec& a, std::uint64_t seed) {
              RngStream rng(seed, "env_noise");
              return env->step(s, a, rng);
          });
    m.def("rollout_random", [](const std::shared_ptr<Env>& env, int horizon, std::uint64_t seed) {
        return rollout(*env, random_policy(*env), horizon, seed);
    });

    py::class_<AugmentedState>(m, "AugmentedState")
        .def_readonly("anchor_state", &AugmentedState::anchor_state)
        .def_readonly("action_queue", &AugmentedState::action_queue)
        .def_readonly("reward_queue", &AugmentedState::reward_queue)
        .def_readonly("effective_delay", &AugmentedState::effective_delay)
        .def_readonly("time_index", &AugmentedState::time_index);

    py::class_<TokenSequence>(m, "TokenSequence")
        .def_readonly("delta_max", &TokenSequence::delta_max)
        .def_readonly("tokens", &TokenSequence::tokens)
        .def_readonly("mask", &TokenSequence::mask)
        .def_property_readonly("width", &TokenSequence::width)
        .def_property_readonly("effective_delay", &TokenSequence::effective_delay);

    py::class_<DelayedStep>(m, "DelayedStep")
        .def_readonly("aug", &DelayedStep::aug)
        .def_readonly("delayed_reward", &DelayedStep::delayed_reward)
        .def_readonly("done", &DelayedStep::done)
        .def_readonly("truncated", &DelayedStep::truncated);

    py::class_<DelayedEnv, std::shared_ptr<DelayedEnv>>(m, "DelayedEnv")
        .def("reset", &DelayedEnv::reset)
        .def("step", &DelayedEnv::step)
        .def_property_readonly("true_state", &DelayedEnv::true_state)
        .def_property_readonly("time", &DelayedEnv::time)
        .def_property_readonly("episode_active", &DelayedEnv::episode_active);

    m.def("wrap",
          [](const std::string& env_id, const std::string& kind, int delta_max, std::uint64_t seed) {
              return wrap(env_id, {delay_kind_from_string(kind), delta_max}, seed);
          });
    m.def("tokenize", &tokenize);

    m.def("geometric_bound", &geometric_bound);
    m.def("stochastic_bound", [](double lipschitz, double eps, int delta_max) {
        return stochastic_bound(lipschitz, eps, uniform_delay_dist(delta_max));
    });
    m.def("w1_empirical", &w1_empirical);
    m.def("normalized_return", &normalized_return);

    m.def("run_command", &run_command,
          "Run a CLI command (collect, train-belief, eval-belief, train-agent, eval-agent, "
          "theory, report) with a key=value config dict; returns the exit code.");
}
