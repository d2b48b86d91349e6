use e2ebt_tensor::{ParamStore, Scalar};

use crate::error::{CoreError, Result};
use crate::model::{TranslationModel, SHARED_EMBEDDING};

/// Point both models at one embedding table initialized from `a`'s. Both
/// old tables are removed, so the store shrinks by one `V x d` matrix.
pub fn apply_sep<T: Scalar>(
    store: &mut ParamStore<T>,
    a: &mut TranslationModel,
    b: &mut TranslationModel,
) -> Result<()> {
    if a.dims.vocab != b.dims.vocab || a.dims.d_model != b.dims.d_model {
        return Err(CoreError::VocabularyMismatch(format!(
            "embedding tables {}x{} and {}x{}",
            a.dims.vocab, a.dims.d_model, b.dims.vocab, b.dims.d_model
        )));
    }
    if a.embed == b.embed {
        return Ok(());
    }
    let value = store.get(a.embed).clone();
    store.remove(a.embed);
    store.remove(b.embed);
    let shared = store.add(SHARED_EMBEDDING, value);
    a.embed = shared;
    b.embed = shared;
    Ok(())
}
