# Shared errors and seeding
