use std::sync::Arc;

use anyhow::{bail, Context};
use elicit_core::oracle::live::{LiveLanguageBackend, LiveRenderBackend, PromptTemplates, ReqwestTransport};
use elicit_core::oracle::{LanguageBackend, RenderBackend, RetryPolicy, ScriptedBackend, ScriptedRenderer};
use elicit_core::session::Backends;
use elicit_core::simulation::{generate_cases, BackendProvider, ScriptedProvider, SharedProvider, SyntheticWorld};

use crate::settings::{BackendKind, BackendSettings};

fn live(settings: &BackendSettings) -> anyhow::Result<(Arc<dyn LanguageBackend>, Arc<dyn RenderBackend>)> {
    let Some(llm) = settings.llm.clone() else {
        bail!("the live backend needs an LLM endpoint (ELICIT_LLM_ENDPOINT or [backend.llm])");
    };
    let Some(renderer) = settings.renderer.clone() else {
        bail!("the live backend needs a render endpoint (ELICIT_RENDER_ENDPOINT or [backend.renderer])");
    };
    let templates = match &settings.templates {
        Some(dir) => {
            PromptTemplates::load_dir(dir).with_context(|| format!("loading templates from {}", dir.display()))?
        }
        None => PromptTemplates::default(),
    };
    let transport = Arc::new(ReqwestTransport::default());
    Ok((
        Arc::new(LiveLanguageBackend::new(llm, templates, transport.clone())),
        Arc::new(LiveRenderBackend::new(renderer, transport)),
    ))
}

/// Backends for the interactive service.
///
/// The scripted variant answers from a synthetic world so sessions have
/// something to ask about; fixtures, when given, take precedence.
pub fn service_backends(settings: &BackendSettings) -> anyhow::Result<Backends> {
    match settings.kind {
        BackendKind::Live => {
            let (language, renderer) = live(settings)?;
            Ok(Backends {
                language,
                renderer,
                retry: RetryPolicy::default(),
            })
        }
        BackendKind::Scripted => {
            let case = generate_cases(1, settings.world_seed, 6..=6).remove(0);
            let world = SyntheticWorld::new(&case, settings.world_seed);
            let mut backend = ScriptedBackend::new(false).with_responder(Arc::new(world));
            if let Some(path) = &settings.fixtures {
                backend = backend.load_fixtures(path)?;
            }
            Ok(Backends {
                language: Arc::new(backend),
                renderer: Arc::new(ScriptedRenderer::default()),
                retry: RetryPolicy::immediate(),
            })
        }
    }
}

/// Backends for benchmark runs.
pub fn bench_provider(settings: &BackendSettings) -> anyhow::Result<Box<dyn BackendProvider>> {
    match settings.kind {
        BackendKind::Scripted => Ok(Box::new(ScriptedProvider::default())),
        BackendKind::Live => {
            let (language, renderer) = live(settings)?;
            Ok(Box::new(SharedProvider {
                simulator: language.clone(),
                language,
                renderer,
                retry: RetryPolicy::default(),
            }))
        }
    }
}
