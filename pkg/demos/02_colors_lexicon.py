# %% [markdown]
# The lexicon unit on the colors task
#
# The colors corpus is a tiny compositional language: four primitive words
# name coloured dots and three function words (fep, blicket, kiki) rearrange
# them.  The lexicon unit only sees *which* input words occur, never their
# order, so after its 30-epoch stage it should have learned each primitive's
# colour and nothing sensible for the function words.

# %%
import numpy as np

from lla import TrainSchedule, colors_corpus
from lla.training import build_translator, train_lexicon

split = colors_corpus()
for pair in split.train[:5]:
    print(" ".join(pair.input), "->", " ".join(pair.output))

# %%
translator = build_translator(split, "lla", seed=0)
ids = [translator.encode_pair(p) for p in split.train]
stage = train_lexicon(translator.model, ids, ids, TrainSchedule(), np.random.default_rng([0, 1]))
print(f"best validation BCE {stage.best_score:.4f} at epoch {stage.best_epoch}")

# %% sigma(w) for every input word; rows are the values the decoder gate sees
tokens = translator.tgt_vocab.tokens
print("word     " + "".join(f"{t:>7}" for t in tokens))
for word in ["dax", "lug", "wif", "zup", "fep", "blicket", "kiki"]:
    gate = translator.model.lexicon_gate([translator.src_vocab.lookup(word)]).data
    print(f"{word:<9}" + "".join(f"{v:7.2f}" for v in gate))

# %% [markdown]
# The primitives light up their own colour plus the stop token.  The
# function words learn almost nothing of their own: a row only receives
# gradient where it wins the max-pool, and the primitives win every
# positive entry.  Entries still at 0.50 never won, which is how kiki and
# blicket end up with spurious half-way associations to b and g.
