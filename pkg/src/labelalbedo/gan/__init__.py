from .losses import adversarial_losses, reconstruction_loss
from .networks import (
    DiscriminatorConfig,
    GeneratorConfig,
    PatchDiscriminator,
    UnetGenerator,
    build_discriminator,
    build_generator,
    discriminator_forward,
    generator_forward,
    patch_grid_size,
)
from .training import (
    ModelBundle,
    PairBatch,
    TrainConfig,
    create_bundle,
    infer,
    load_checkpoint,
    read_loss_log,
    resize_image,
    save_checkpoint,
    train,
    train_step,
)
