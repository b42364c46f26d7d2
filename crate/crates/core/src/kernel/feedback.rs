//! Structured rejection feedback. Every rejection renders as a single
//! machine-parseable line (`REJECT: <code_token>(<detail>)…`) that an agent
//! can read back to repair its proposal, so the render formats are part of
//! the kernel's contract and pinned bit-exact by tests.

use serde::Serialize;

use crate::isa::{Precondition, SchemaViolation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RejectionCode {
    MissingCapability,
    OutOfScope,
    IrreversibleEffect,
    Conflict,
    RateLimited,
    PreconditionFailed,
    SchemaError,
}

impl RejectionCode {
    fn token(self) -> &'static str {
        match self {
            RejectionCode::MissingCapability => "missing_capability",
            RejectionCode::OutOfScope => "out_of_scope",
            RejectionCode::IrreversibleEffect => "irreversible_effect",
            RejectionCode::Conflict => "conflict",
            RejectionCode::RateLimited => "rate_limited",
            RejectionCode::PreconditionFailed => "precondition_failed",
            RejectionCode::SchemaError => "schema_error",
        }
    }

    fn from_token(token: &str) -> Option<Self> {
        Some(match token {
            "missing_capability" => RejectionCode::MissingCapability,
            "out_of_scope" => RejectionCode::OutOfScope,
            "irreversible_effect" => RejectionCode::IrreversibleEffect,
            "conflict" => RejectionCode::Conflict,
            "rate_limited" => RejectionCode::RateLimited,
            "precondition_failed" => RejectionCode::PreconditionFailed,
            "schema_error" => RejectionCode::SchemaError,
            _ => return None,
        })
    }
}

/// A rejection with its machine-readable detail line (everything after
/// `REJECT: `).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectionFeedback {
    pub code: RejectionCode,
    pub detail: String,
}

impl RejectionFeedback {
    /// `missing_capability("<verb>:svc/<name>")` — name is the bare service
    /// name, namespace stripped.
    pub fn missing_capability(verb: &str, service_name: &str) -> Self {
        RejectionFeedback {
            code: RejectionCode::MissingCapability,
            detail: format!("missing_capability(\"{verb}:svc/{service_name}\")"),
        }
    }

    /// `out_of_scope("svc/<name>" not in recovery_group)`
    pub fn out_of_scope(service_name: &str) -> Self {
        RejectionFeedback {
            code: RejectionCode::OutOfScope,
            detail: format!("out_of_scope(\"svc/{service_name}\" not in recovery_group)"),
        }
    }

    /// `irreversible_effect("<kind>") requires break_glass`
    pub fn irreversible_effect(kind: &str) -> Self {
        RejectionFeedback {
            code: RejectionCode::IrreversibleEffect,
            detail: format!("irreversible_effect(\"{kind}\") requires break_glass"),
        }
    }

    /// `conflict(resource="<granularity>/<ref>", txn="<txn_id>")` — names
    /// the *held* resource and its holder.
    pub fn conflict(resource: &str, txn_id: &str) -> Self {
        RejectionFeedback {
            code: RejectionCode::Conflict,
            detail: format!("conflict(resource=\"{resource}\", txn=\"{txn_id}\")"),
        }
    }

    /// `rate_limited(namespace="<ns>", limit=<n>/60s)`
    pub fn rate_limited(namespace: &str, limit: u32) -> Self {
        RejectionFeedback {
            code: RejectionCode::RateLimited,
            detail: format!("rate_limited(namespace=\"{namespace}\", limit={limit}/60s)"),
        }
    }

    /// `precondition_failed(<check>(<args>))`
    pub fn precondition_failed(precondition: &Precondition) -> Self {
        RejectionFeedback {
            code: RejectionCode::PreconditionFailed,
            detail: format!("precondition_failed({precondition})"),
        }
    }

    /// `schema_error(<field>: <message>)`
    pub fn schema_error(violation: &SchemaViolation) -> Self {
        RejectionFeedback {
            code: RejectionCode::SchemaError,
            detail: format!("schema_error({violation})"),
        }
    }

    /// The single-line wire form.
    pub fn render(&self) -> String {
        format!("REJECT: {}", self.detail)
    }

    /// Inverse of [`render`](Self::render): recovers the code and detail
    /// from a feedback line. Returns `None` for anything that is not a
    /// well-formed rejection.
    pub fn parse(line: &str) -> Option<Self> {
        let detail = line.strip_prefix("REJECT: ")?;
        let open = detail.find('(')?;
        let code = RejectionCode::from_token(&detail[..open])?;
        let close = detail.rfind(')')?;
        let suffix = &detail[close + 1..];
        if !(suffix.is_empty() || suffix == " requires break_glass") {
            return None;
        }
        Some(RejectionFeedback { code, detail: detail.to_string() })
    }
}

impl std::fmt::Display for RejectionFeedback {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.render())
    }
}

// --- tests -----------------------------------------------------------------------
