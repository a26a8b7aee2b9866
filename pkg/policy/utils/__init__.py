# Estimation engine
