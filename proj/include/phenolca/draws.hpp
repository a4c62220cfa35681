#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "phenolca/model.hpp"

namespace phenolca {

struct AcceptanceStats
{
    std::size_t chain = 0;
    std::string block;
    double warmup_rate = 0.0;
    std::size_t proposed = 0; // sampling phase only
    std::size_t accepted = 0;
    double final_scale = 0.0;

    double rate() const { return proposed ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0; }
};

/// Posterior draws from either backend. Row s of pointwise_loglik holds
/// log_lik_patient of every patient under draws[s].
struct PosteriorDraws
{
    std::vector<ParameterState> draws;
    RowMatrix pointwise_loglik; // S x N, empty when not retained
    std::vector<std::size_t> chain_id;
    std::size_t n_chains = 1;
    bool eta_stored = true; // false: draws[s].eta is empty
    std::vector<AcceptanceStats> acceptance;

    std::size_t size() const { return draws.size(); }
    bool has_loglik() const { return pointwise_loglik.rows() > 0; }

    /// Values of one scalar per draw, grouped by chain in draw order.
    template <class Fn>
    std::vector<std::vector<double>> by_chain(Fn&& quantity) const
    {
        std::vector<std::vector<double>> out(n_chains);
        for (std::size_t s = 0; s < draws.size(); ++s) out.at(chain_id[s]).push_back(quantity(draws[s]));
        return out;
    }
};

} // namespace phenolca
