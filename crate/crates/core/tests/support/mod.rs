use emoforge::pipeline::ExperimentConfig;

/// Small budgets so a full grid finishes in seconds.
pub fn quick_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.skipgram.dim = 16;
    c.skipgram.epochs = 2;
    c.subword.dim = 16;
    c.subword.epochs = 2;
    c.subword.buckets = 1 << 12;
    c.encoder.model_dim = 16;
    c.encoder.ff_dim = 32;
    c.encoder.blocks = 1;
    c.encoder_train.max_epochs = 3;
    c.hybrid.embed_dim = 16;
    c.hybrid.filters = 8;
    c.hybrid.hidden = 8;
    c.sequence_train.max_epochs = 3;
    c.learners.forest.trees = 10;
    c.learners.head.train.lr = 1e-3;
    c.learners.head.train.max_epochs = 10;
    c.boost.rounds = 3;
    c
}
