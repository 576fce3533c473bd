#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace khop {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Graph / topology
// ---------------------------------------------------------------------------
class GraphError : public Error {
    using Error::Error;
};
class GraphNotConnected : public GraphError {
    using GraphError::GraphError;
};
class IndexOutOfRange : public GraphError {
    using GraphError::GraphError;
};
class EmptyNeighborhood : public GraphError {
    using GraphError::GraphError;
};

// A proven structural property failed. Always a bug, never bad input.
class InternalConsistencyError : public std::logic_error {
    using std::logic_error::logic_error;
};

// ---------------------------------------------------------------------------
// Numerics
// ---------------------------------------------------------------------------
class DimensionError : public Error {
    using Error::Error;
};
class NumericalError : public Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Gain design
// ---------------------------------------------------------------------------
class GainConditionViolated : public Error {
    using Error::Error;
};
class CouplingNotPD : public Error {
    using Error::Error;
};
class CertificateInfeasible : public Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Observer protocol
// ---------------------------------------------------------------------------
class MissingNeighborData : public Error {
    using Error::Error;
};
class ProtocolError : public Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------
class SimulationAborted : public Error {
public:
    SimulationAborted(const std::string& what, double time, std::size_t agent)
        : Error(what), time_(time), agent_(agent) {}

    double time() const noexcept { return time_; }
    std::size_t agent() const noexcept { return agent_; }

private:
    double time_;
    std::size_t agent_;
};

class DivergenceDetected : public SimulationAborted {
    using SimulationAborted::SimulationAborted;
};

// Raised when a state leaves the configured box; the box is asserted, never clamped.
class StateBoxViolation : public SimulationAborted {
    using SimulationAborted::SimulationAborted;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------
class ConfigError : public Error {
    using Error::Error;
};

}  // namespace khop
