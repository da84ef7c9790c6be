use serde::{Deserialize, Serialize};

/// Link function of the marginal mean model `g(mu_ij) = beta_j + X_ij * delta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Log,
    Identity,
}

impl Link {
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Logit => 1.0 / (1.0 + (-eta).exp()),
            Link::Log => eta.exp(),
            Link::Identity => eta,
        }
    }

    pub fn apply(self, mu: f64) -> f64 {
        match self {
            Link::Logit => (mu / (1.0 - mu)).ln(),
            Link::Log => mu.ln(),
            Link::Identity => mu,
        }
    }

    /// `d mu / d eta` expressed through the mean.
    pub fn mu_eta(self, mu: f64) -> f64 {
        match self {
            Link::Logit => mu * (1.0 - mu),
            Link::Log => mu,
            Link::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Link::Logit => "logit",
            Link::Log => "log",
            Link::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Link {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logit" => Ok(Link::Logit),
            "log" => Ok(Link::Log),
            "identity" => Ok(Link::Identity),
            other => Err(format!("unknown link {other:?} (expected logit, log or identity)")),
        }
    }
}
