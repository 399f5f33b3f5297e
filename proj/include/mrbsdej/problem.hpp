#pragma once

#include "mrbsdej/bsdej_core.hpp"
#include "mrbsdej/jump_model.hpp"
#include "mrbsdej/loss_ops.hpp"

namespace mrbsdej {

/// Problem data (jump driver, loss l, driver f, terminal xi) on one grid.
struct Problem {
    JumpModel model;
    LossSpec loss;
    DriverSpec driver;
    TerminalSpec terminal;
};

}  // namespace mrbsdej
