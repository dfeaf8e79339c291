# Experiment presets and the recorded default for every run setting
DEFAULTS = {
    "model": None,  # direct model: n, N, spectra, scalings (or a "design" block)
    "functions": [
        {"kind": "monomial", "power": 1},
        {"kind": "monomial", "power": 2}
    ],
    "contour": {
        "nodes": 128,  # trapezoid nodes R, even
        "margin": 0.5,  # absolute clearance around the support bound
        "relative_margin": 0.5,  # clearance as a fraction of the support half-width
        "radius_ratio": 1.1,  # paired contour radius / first contour radius
        "mode": None  # covariance mode; None picks by N
    },
    "solver": {
        "tol": 1e-12,
        "max_iter": 10000,
        "damping": None,
        "accelerate": True,
        "continuation_start": 1.0,
        "continuation_ratio": 0.5
    },
    "mc": {
        "replicates": 0,
        "master_seed": 20240517,
        "histograms": False
    },
    "solve": {
        "z": [[0.0, 1.0]]  # [re, im] pairs
    },
    "density": {
        "x_min": 0.0,
        "x_max": None,  # None: the support bound
        "points": 400,
        "eta": 1e-3  # Im z of the Stieltjes inversion
    },
    "table1": None,
    "output_dir": "outputs"
}

EXPERIMENTS = {
    "mp-small": {
        "name": "Marchenko-Pastur, one level",
        "model": {
            "n": 300,
            "N": 300,
            "spectra": ["identity"],
            "scalings": [{"constant": 1.0}]
        },
        "solve": {
            "z": [[0.5, 1.0], [1.0, 0.5], [2.0, 0.05], [0.0, 2.0]]
        },
        "mc": {"replicates": 2000}
    },
    "zero-sigma": {
        "name": "Degenerate model, all covariances zero",
        "model": {
            "n": 20,
            "N": 40,
            "spectra": [{"kind": "scaled-identity", "tau_e": 0.0}],
            "scalings": [{"constant": 1.0}]
        }
    },
    "two-level-dense": {
        "name": "Two non-commuting levels on random scalings",
        "model": {
            "n": 60,
            "N": 90,
            "spectra": [
                {"kind": "exponential-decay", "tau1": 1.0, "tau2": 0.05},
                {"kind": "random-wishart", "df": 120, "seed": 11}  # dense, does not commute
            ],
            "scalings": [{"uniform": [0.5, 1.5], "seed": 3}, {"constant": 1.0}]
        },
        "contour": {"mode": "exact-leave-one-out"}
    },
    "table1-full": {
        "name": "Full-sib method of moments, published scale",
        "table1": {
            "F": 500,  # families
            "p": 500,  # traits
            "sibling_probs": {"1": 0.5, "2": 0.5},
            "design_seed": 2024,
            "tau": [1.0, 0.3, 1.0],  # tau1, tau2, tau_e
            "index_scale": 1,  # sigma_i = tau1 exp(-tau2 i)
            "moment_map": "exact",
            "replicates": 1000
        },
        "mc": {"histograms": True}
    },
    "table1-desk": {
        "name": "Full-sib method of moments, desk scale",
        "table1": {
            "F": 200,
            "p": 200,
            "sibling_probs": {"1": 0.5, "2": 0.5},
            "design_seed": 2024,
            "tau": [1.0, 0.3, 1.0],
            "index_scale": 1,
            "moment_map": "exact",
            "replicates": 200
        },
        "mc": {"histograms": True}
    },
    "table1-full-rescaled": {
        "name": "Full-sib method of moments, decay spread over all p traits",
        "table1": {
            "F": 500,
            "p": 500,
            "sibling_probs": {"1": 0.5, "2": 0.5},
            "design_seed": 2024,
            "tau": [1.0, 0.3, 1.0],
            "index_scale": 500,  # sigma_i = tau1 exp(-tau2 i / p)
            "moment_map": "equivalent",  # drops F^-2 sum_f Tr T_f^2 from the second moment
            "replicates": 1000
        },
        "mc": {"histograms": True}
    }
}
