# %% [markdown]
# How one batch flows through the model: a frozen SASRec encoder distills
# intent tokens, the reasoner fuses them into the item sequence, and the
# contrastive term compares two masked copies of the intents.

# %%
import numpy as np

from igrsr.backbone import SASRec
from igrsr.config import ModelConfig
from igrsr.data import generate_synthetic, leave_one_out_split, pad_split
from igrsr.icr import infonce, sample_views
from igrsr.model import IGRSR

# %%
# Synthetic users hop between a couple of latent intents, each intent owning
# its own block of items.  The generator keeps the ground-truth labels.
ds = generate_synthetic(users=200, items=80, intent_count=4, seq_len_range=(6, 12), seed=3)
print(ds.stats())

train, val, test = leave_one_out_split(ds)
batch = pad_split(ds, test, n_max=12)
sample = batch.items[:4]
print("left-padded test histories\n", sample)

# %%
# The backbone would normally be pretrained first.  Building the model
# freezes it, so only the prefix/intent tables and the reasoner learn.
backbone = SASRec(ds.item_count, 16, 12, layers=1, heads=2, dropout=0.0, seed=0)
config = ModelConfig(prefix_tokens=4, intent_tokens=3, intent_dim=16, hidden_dim=16, layers=1, heads=2, n_max=12, dropout=0.0)
model = IGRSR(ds.item_count, config, backbone, seed=0)
print("frozen backbone tensors:", sum(not backbone.params.is_trainable(n) for n in backbone.params))
print("trainable scalars:", model.params.scalar_count())

# %%
# The distiller lays each row out as [pad, prefix, items, intent slots] and
# reads the intent slots off the encoder output.
ids, kinds, valid = model.lid.augmented_batch(sample)
print("token kinds for row 0 (-1 pad, 0 prefix, 1 item, 2 intent):", kinds[0])
t_d = model.intents(sample)
print("projected intents:", t_d.shape)

# %%
# Scores cover the whole catalogue; column 0 is padding and never wins.
scores = model.scores(batch)
print("score matrix:", scores.shape, "top item for user 0:", int(np.argmax(scores[0])))

# %%
# Two Bernoulli masks over the intent tokens give two views.  Encoding both
# and contrasting them yields the auxiliary loss.
v1, v2 = sample_views(t_d, 0.5, 7)
h1 = model.encode(sample, v1)
h2 = model.encode(sample, v2)
print("contrastive loss over 4 users:", round(infonce(h1, h2, 0.1).item(), 4))
