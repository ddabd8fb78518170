#pragma once

#include <map>
#include <string>
#include <vector>

#include "mfsc/control.hpp"
#include "mfsc/forward.hpp"
#include "mfsc/rbsde.hpp"
#include "mfsc/stopping.hpp"

namespace mfsc::registry {

using Params = std::map<std::string, double>;

// forward-simulation coefficient sets
CoefficientSpec coefficients(const std::string& name, const TimeGrid& grid,
                             const Params& params = {});

// RBSDE drivers (the declared Lipschitz constant rides along)
DriverSpec driver(const std::string& name, const TimeGrid& grid, const Params& params = {});

// barrier/terminal pairs realized on an ensemble
BarrierSpec barrier(const std::string& name, const ParticleEnsemble& ens,
                    const Params& params = {});

// singular-control problems (time grid fixes the dt-dependent cost terms)
ControlProblem control_problem(const std::string& name, const TimeGrid& grid,
                               const Params& params = {});

// lattice-oracle reductions for the stopping problems that admit one
MarkovStoppingSpec markov_spec(const std::string& name, const TimeGrid& grid,
                               const Params& params = {});

struct CatalogEntry {
    std::string kind;
    std::string name;
    std::string summary;
};

std::vector<CatalogEntry> catalog();

}  // namespace mfsc::registry
