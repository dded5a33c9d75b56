"""Shared text fixtures for diff and review-statistics tests."""

# Reader-review pair 1: a lightly edited two-item impression.
ORIGINAL_IMPRESSION_1 = """\
1. Bibasilar opacities that may be related to atelectasis, with a differential
   including underlying infection, pneumonia, or aspiration.
2. New opacity in the lateral left mid lung, nonspecific but potentially
   representing additional consolidation or pulmonary infarct.
"""

EDITED_IMPRESSION_1 = """\
1. Bibasilar opacities may be related to atelectasis, although underlying
   infection, pneumonia, and/or aspiration is of concern.
2. New opacity in the lateral left mid lung, nonspecific but potentially
   representing additional consolidation or pulmonary infarct.
"""

# Reader-review pair 2: a four-item impression collapsed to one line.
ORIGINAL_IMPRESSION_2 = """\
1. Resolving consolidation at the right lung base, likely due to dependent
   edema or combined dependent edema and atelectasis.
2. Mild to moderate enlargement of the heart.
3. No pneumothorax.
4. Dual-channel dialysis catheter in situ with the tip in the right atrium.
"""

EDITED_IMPRESSION_2 = """\
1. Resolving consolidation at the right lung base with minimal residual
   interstitial edema.
"""
