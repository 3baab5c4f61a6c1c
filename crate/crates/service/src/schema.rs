//! JSON schemas of the request and response bodies, served at `/schema`.

use serde_json::{json, Value};

fn coord() -> Value {
    json!({
        "type": "object",
        "description": "1-based dose combination: j indexes agent A (rows), k agent B (columns)",
        "required": ["j", "k"],
        "properties": {
            "j": { "type": "integer", "minimum": 1 },
            "k": { "type": "integer", "minimum": 1 }
        }
    })
}

fn trial_config() -> Value {
    json!({
        "type": "object",
        "required": ["rows", "cols", "phi", "eps1", "eps2", "max_n"],
        "properties": {
            "rows": { "type": "integer", "minimum": 1 },
            "cols": { "type": "integer", "minimum": 1 },
            "phi": { "type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1 },
            "eps1": { "type": "number", "exclusiveMinimum": 0 },
            "eps2": { "type": "number", "exclusiveMinimum": 0 },
            "cutoff": { "type": "number", "default": 0.95 },
            "overdose_control": { "type": "boolean", "default": true },
            "max_n": { "type": "integer", "minimum": 1 },
            "cohort_size": { "type": "integer", "minimum": 1, "default": 1 },
            "algorithm": { "enum": ["key1", "key2", "key3", "key4", "key5"], "default": "key1" },
            "seed": {
                "type": "integer",
                "minimum": 0,
                "description": "seed of the trial's random stream; chosen by the server when omitted"
            },
            "selection_prior": {
                "type": "object",
                "properties": { "a": { "type": "number" }, "b": { "type": "number" } },
                "default": { "a": 0.05, "b": 0.05 }
            }
        }
    })
}

fn status() -> Value {
    json!({ "enum": ["active", "stopped_safety", "completed_max_n", "closed_early"] })
}

fn decision() -> Value {
    json!({ "enum": ["escalate", "retain", "deescalate"] })
}

fn selection() -> Value {
    json!({
        "type": "object",
        "properties": {
            "selected": { "oneOf": [{ "$ref": "#/definitions/DoseCoord" }, { "type": "null" }] },
            "isotonic_estimates": {},
            "reason": { "type": ["string", "null"] },
            "draws": { "type": "array", "items": { "type": "number" } }
        }
    })
}

fn trial_resource() -> Value {
    json!({
        "type": "object",
        "required": ["id", "revision", "created_at", "updated_at", "config", "state"],
        "properties": {
            "id": { "type": "string" },
            "revision": { "type": "integer", "minimum": 1 },
            "created_at": { "type": "string", "format": "date-time" },
            "updated_at": { "type": "string", "format": "date-time" },
            "config": { "$ref": "#/definitions/TrialConfig" },
            "state": {
                "type": "object",
                "properties": {
                    "tallies": { "description": "row-major grid {rows, cols, cells} of {n, y} per dose" },
                    "current": { "$ref": "#/definitions/DoseCoord" },
                    "eliminated": { "type": "array", "items": { "$ref": "#/definitions/DoseCoord" } },
                    "status": { "$ref": "#/definitions/TrialStatus" },
                    "history": { "type": "array" }
                }
            },
            "idempotency_key": { "type": "string" },
            "finalization": {
                "type": "object",
                "properties": {
                    "seed": { "type": "integer" },
                    "forced": { "type": "boolean" },
                    "selection": { "$ref": "#/definitions/MtdSelection" }
                }
            }
        }
    })
}

fn error_body() -> Value {
    json!({
        "type": "object",
        "required": ["error", "message"],
        "properties": {
            "error": {
                "enum": ["not_found", "validation", "revision_conflict", "terminal_state", "still_active", "internal"]
            },
            "message": { "type": "string" },
            "revision": { "type": "integer" },
            "fields": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": { "field": { "type": "string" }, "message": { "type": "string" } }
                }
            }
        }
    })
}

/// Every published schema, keyed by name.
pub fn schemas() -> Value {
    json!({
        "$schema": "http://json-schema.org/draft-07/schema#",
        "definitions": {
            "DoseCoord": coord(),
            "TrialConfig": trial_config(),
            "TrialStatus": status(),
            "Decision": decision(),
            "MtdSelection": selection(),
            "TrialResource": trial_resource(),
            "Error": error_body(),
            "CreateTrialRequest": {
                "allOf": [{ "$ref": "#/definitions/TrialConfig" }],
                "description": "send an Idempotency-Key header to make retries safe"
            },
            "CohortRequest": {
                "type": "object",
                "required": ["dlt_count", "expected_revision"],
                "properties": {
                    "dlt_count": { "type": "integer", "minimum": 0 },
                    "expected_revision": { "type": "integer", "minimum": 1 }
                }
            },
            "CohortResponse": {
                "type": "object",
                "properties": {
                    "revision": { "type": "integer" },
                    "decision": { "oneOf": [{ "$ref": "#/definitions/Decision" }, { "type": "null" }] },
                    "next_dose": { "oneOf": [{ "$ref": "#/definitions/DoseCoord" }, { "type": "null" }] },
                    "eliminated": { "type": "array", "items": { "$ref": "#/definitions/DoseCoord" } },
                    "status": { "$ref": "#/definitions/TrialStatus" },
                    "trial": { "$ref": "#/definitions/TrialResource" }
                }
            },
            "FinalizeRequest": {
                "type": "object",
                "properties": { "force": { "type": "boolean", "default": false } }
            },
            "FinalizeResponse": {
                "type": "object",
                "properties": {
                    "revision": { "type": "integer" },
                    "seed": { "type": "integer" },
                    "forced": { "type": "boolean" },
                    "selection": { "$ref": "#/definitions/MtdSelection" }
                }
            },
            "DecisionTable": {
                "type": "object",
                "properties": {
                    "revision": { "type": "integer" },
                    "phi": { "type": "number" },
                    "eps1": { "type": "number" },
                    "eps2": { "type": "number" },
                    "n_max": { "type": "integer" },
                    "escalate_if_at_most": { "type": "array", "items": { "type": "integer" } },
                    "deescalate_if_at_least": { "type": "array", "items": { "type": "integer" } }
                }
            },
            "SimulationRequest": {
                "type": "object",
                "required": ["trial", "scenarios"],
                "properties": {
                    "version": { "type": "integer", "default": 1 },
                    "trial": { "$ref": "#/definitions/TrialConfig" },
                    "scenarios": {
                        "oneOf": [
                            {
                                "type": "object",
                                "required": ["kind", "matrices"],
                                "properties": {
                                    "kind": { "const": "explicit" },
                                    "matrices": { "type": "array" }
                                }
                            },
                            {
                                "type": "object",
                                "required": ["kind"],
                                "properties": {
                                    "kind": { "const": "generated" },
                                    "target_mtd_count": { "type": ["integer", "null"] },
                                    "p_max_mode": { "enum": ["beta", "mean"] },
                                    "max_attempts": { "type": "integer" }
                                }
                            }
                        ]
                    },
                    "n_scenarios": { "type": "integer" },
                    "trials_per_scenario": { "type": "integer", "default": 100 },
                    "seed": { "type": "integer", "default": 0 },
                    "threads": { "type": "integer" }
                }
            },
            "SimulationJob": {
                "type": "object",
                "properties": {
                    "id": { "type": "string" },
                    "status": { "enum": ["running", "completed", "failed"] },
                    "submitted_at": { "type": "string", "format": "date-time" },
                    "finished_at": { "type": "string", "format": "date-time" },
                    "spec": { "$ref": "#/definitions/SimulationRequest" },
                    "metrics": { "type": "object" },
                    "error": { "type": "string" }
                }
            }
        }
    })
}
