//! Smoke test against a real chat endpoint. Set `MANIAGENT_LIVE_URL`
//! (and optionally `MANIAGENT_LIVE_MODEL`, `MANIAGENT_LIVE_KEY_ENV`) and run
//! with `--ignored`.

use std::sync::Arc;

use maniagent::http::LiveChatBackend;
use maniagent_core::gateway::{BackendProfile, Gateway};
use maniagent_core::prompts::{PromptLibrary, STATUS_EVAL};

#[test]
#[ignore = "needs a live endpoint"]
fn live_endpoint_answers_a_status_prompt() {
    let Ok(url) = std::env::var("MANIAGENT_LIVE_URL") else {
        eprintln!("MANIAGENT_LIVE_URL not set; nothing to do");
        return;
    };
    let model = std::env::var("MANIAGENT_LIVE_MODEL").unwrap_or_default();
    let mut profile = BackendProfile::live(&url, &model);
    profile.api_key_env = std::env::var("MANIAGENT_LIVE_KEY_ENV").ok();
    let backend = LiveChatBackend::from_profile(&profile).expect("profile is usable");
    let gateway = Gateway::new(Arc::new(backend), 2);
    let request = PromptLibrary::builtin()
        .request(
            STATUS_EVAL,
            "status_v1",
            &[
                ("task", "place the carrot on the plate"),
                ("scene", "a carrot lies on a white plate"),
                (
                    "history",
                    "1. pick up the carrot and place it on the plate: succeeded",
                ),
                ("report", "all waypoints reached"),
            ],
        )
        .expect("builtin prompt renders");
    let response = gateway
        .complete(&request)
        .expect("endpoint answers in schema");
    assert!(
        response.parsed_payload.get("verdict").is_some() || response.parsed_payload.is_string()
    );
}
