# Latent-conditioned multi-objective policy gradient toolkit
import logging

logger = logging.getLogger("lcmopg")
